"""Model-formula mini-language.

Grammar (whitespace and ``#`` comments are ignored)::

    formula := ident "~" term ("+" term | "-" "1")*
    term    := ident | "1" | "0" | smooth
    smooth  := "s" "(" ident ("," ident)? ("," kwarg)* ")"
    kwarg   := ("bs" "=" string) | ("k" "=" int) | ("m" "=" int)

``- 1`` and ``+ 0`` drop the intercept. ``list(f1, ~ rhs2, ...)`` groups one
formula per distribution parameter (see :func:`parse_formulas`).
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from math import comb

SUPPORTED_BASES = ("cr", "tp")
DEFAULT_K = {1: 10, 2: 30}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<ident>[A-Za-z.][A-Za-z0-9._]*)
  | (?P<number>[0-9]+(?:\.[0-9]*)?)
  | (?P<string>"[^"\n]*")
  | (?P<op>[~+\-(),=])
    """,
    re.VERBOSE,
)

_UNSUPPORTED_CALLS = {
    "te": "tensor product smooths",
    "ti": "tensor product smooths",
    "t2": "tensor product smooths",
    "offset": "offset()",
}


class FormulaError(ValueError):
    """Raised for malformed or unsupported formulas.

    ``offset`` is the byte offset (UTF-8) into the source text.
    """

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at byte {offset})")


class UnsupportedBasisWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SmoothSpec:
    variables: tuple[str, ...]
    basis_code: str = "tp"
    k: int | None = None
    m: int = 2

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.variables:
            raise ValueError("a smooth needs at least one covariate")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError(f"repeated covariate in smooth of {self.variables}")
        if self.k is not None and self.supported:
            if self.basis_code == "cr" and self.k < 3:
                raise ValueError("cr smooths need k >= 3")
            if self.basis_code == "tp" and self.k <= self.null_dim:
                raise ValueError(
                    f"tp smooth of {len(self.variables)} covariate(s) needs k > {self.null_dim}"
                )

    @property
    def label(self) -> str:
        return f"s({','.join(self.variables)})"

    @property
    def supported(self) -> bool:
        return self.basis_code in SUPPORTED_BASES

    @property
    def null_dim(self) -> int:
        """Dimension of the penalty null space before centering."""
        if self.basis_code == "cr":
            return 2
        d, m = len(self.variables), self.m
        # number of monomials of degree < m in d variables
        return comb(m + d - 1, d)

    @property
    def effective_k(self) -> int:
        return self.k if self.k is not None else DEFAULT_K.get(len(self.variables), 10)


@dataclass(frozen=True)
class ModelFormula:
    response: str
    parametric: tuple[str, ...] = ()
    smooths: tuple[SmoothSpec, ...] = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "parametric", tuple(self.parametric))
        object.__setattr__(self, "smooths", tuple(self.smooths))

    @property
    def covariates(self) -> list[str]:
        """Model covariates in order of first appearance."""
        seen: dict[str, None] = {}
        for name in self.parametric:
            seen.setdefault(name)
        for s in self.smooths:
            for v in s.variables:
                seen.setdefault(v)
        return list(seen)

    def __str__(self) -> str:
        return print_formula(self)


@dataclass
class _Token:
    kind: str
    value: str
    offset: int


@dataclass
class _Parser:
    text: str
    tokens: list[_Token] = field(default_factory=list)
    pos: int = 0

    def __post_init__(self):
        self.tokens = list(_tokenize(self.text))

    def _byte(self, char_offset: int) -> int:
        return len(self.text[:char_offset].encode("utf-8"))

    def error(self, message: str, tok: _Token | None = None) -> FormulaError:
        tok = tok or self.peek()
        return FormulaError(message, self._byte(tok.offset), self.text)

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def accept(self, value: str) -> _Token | None:
        tok = self.peek()
        if tok.kind == "op" and tok.value == value:
            self.pos += 1
            return tok
        return None

    def expect(self, value: str, context: str) -> _Token:
        tok = self.accept(value)
        if tok is None:
            got = self.peek()
            raise self.error(f"expected '{value}' {context}, got {_describe(got)}")
        return tok

    def expect_ident(self, context: str) -> _Token:
        tok = self.peek()
        if tok.kind != "ident":
            raise self.error(f"expected a variable name {context}, got {_describe(tok)}")
        return self.next()

    def formula(self, in_list: bool = False, one_sided: bool = False) -> ModelFormula:
        """One formula; inside ``list(...)`` it ends at ',' or ')'."""
        stops = (",", ")") if in_list else ()

        def at_end(tok):
            return tok.kind == "eof" or (tok.kind == "op" and tok.value in stops)

        start = self.peek()
        if start.kind == "ident" and self.tokens[self.pos + 1].value == "(":
            if start.value in _UNSUPPORTED_CALLS:
                raise self.error(f"{_UNSUPPORTED_CALLS[start.value]} are not supported")
        response = ""
        if self.peek().kind == "op" and self.peek().value == "~":
            if not one_sided:
                raise self.error("missing response before '~'")
            self.next()
        else:
            response = self.expect_ident("as the response").value
            self.expect("~", "after the response")

        if at_end(self.peek()):
            raise self.error("empty right-hand side")

        parametric: list[str] = []
        smooths: list[SmoothSpec] = []
        intercept = True
        sign = "+"
        while True:
            tok = self.peek()
            if tok.kind == "number" and tok.value in ("0", "1"):
                self.next()
                if (tok.value == "1") == (sign == "-"):
                    intercept = False
                else:
                    intercept = True
            elif sign == "-":
                raise self.error("only '- 1' may be subtracted", tok)
            elif tok.kind == "ident" and self.tokens[self.pos + 1].value == "(":
                smooth = self.smooth()
                if any(s.label == smooth.label for s in smooths):
                    raise self.error(f"duplicate smooth {smooth.label}", tok)
                smooths.append(smooth)
            elif tok.kind == "ident":
                self.next()
                if tok.value == response:
                    raise self.error(f"response '{response}' also appears as a covariate", tok)
                if tok.value not in parametric:
                    parametric.append(tok.value)
            else:
                raise self.error(f"expected a term, got {_describe(tok)}")

            tok = self.peek()
            if at_end(tok):
                break
            if tok.kind == "op" and tok.value == "~":
                raise self.error("duplicate response: a formula has exactly one '~'")
            if tok.kind == "op" and tok.value in "+-":
                sign = self.next().value
                if at_end(self.peek()):
                    raise self.error("expected a term after '" + sign + "'")
                continue
            raise self.error(f"expected '+' or end of formula, got {_describe(tok)}")

        for s in smooths:
            if response and response in s.variables:
                raise self.error(f"response '{response}' also appears as a covariate", start)
        if not parametric and not smooths and not intercept:
            raise self.error("empty right-hand side", start)
        return ModelFormula(response, tuple(parametric), tuple(smooths), intercept)

    def formula_list(self) -> tuple[ModelFormula, ...]:
        """``list(y ~ ..., ~ ..., ...)``: one formula per linear predictor."""
        self.next()
        self.expect("(", "after 'list'")
        out = [self.formula(in_list=True)]
        while self.accept(","):
            out.append(self.formula(in_list=True, one_sided=True))
        self.expect(")", "to close list()")
        if self.peek().kind != "eof":
            raise self.error(f"expected end of input after list(), got {_describe(self.peek())}")
        return tuple(out)

    def is_list(self) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.value == "list" and self.tokens[self.pos + 1].value == "("

    def smooth(self) -> SmoothSpec:
        start = self.next()
        name = start.value
        if name in _UNSUPPORTED_CALLS:
            raise self.error(f"{_UNSUPPORTED_CALLS[name]} are not supported", start)
        if name != "s":
            raise self.error(f"unknown function '{name}'; only s() terms are supported", start)
        self.expect("(", "after 's'")
        variables = [self.expect_ident("inside s()").value]
        kwargs: dict[str, object] = {}
        while self.accept(","):
            tok = self.expect_ident("or keyword argument inside s()")
            if self.accept("="):
                self.keyword(tok, kwargs)
            else:
                if kwargs:
                    raise self.error("positional covariate after keyword argument", tok)
                if tok.value in variables:
                    raise self.error(f"covariate '{tok.value}' repeated in s()", tok)
                variables.append(tok.value)
                if len(variables) > 2:
                    raise self.error("s() supports at most 2 covariates", tok)
        self.expect(")", "to close s()")

        try:
            spec = SmoothSpec(tuple(variables), **kwargs)
        except ValueError as exc:
            raise self.error(str(exc), start) from None
        if not spec.supported:
            warnings.warn(
                f"unsupported basis: {spec.basis_code} in {spec.label}; fitting will fail",
                UnsupportedBasisWarning,
                stacklevel=4,
            )
        return spec

    def keyword(self, key: _Token, kwargs: dict) -> None:
        name = key.value
        if name == "by":
            raise self.error("by= variables are not supported", key)
        if name not in ("bs", "k", "m"):
            raise self.error(f"unknown argument '{name}' to s(); expected bs, k or m", key)
        arg = {"bs": "basis_code", "k": "k", "m": "m"}[name]
        if arg in kwargs:
            raise self.error(f"argument '{name}' given twice", key)
        if name == "bs":
            tok = self.peek()
            if tok.kind != "string":
                raise self.error(f"expected a quoted basis code after 'bs =', got {_describe(tok)}")
            kwargs[arg] = self.next().value[1:-1]
            return
        negative = self.accept("-") is not None
        tok = self.peek()
        if tok.kind != "number" or "." in tok.value:
            raise self.error(f"expected an integer after '{name} =', got {_describe(tok)}")
        value = int(self.next().value)
        if negative:
            value = -value
        if name == "k" and value < 1:
            raise self.error("k must be a positive integer", tok)
        kwargs[arg] = value


def _describe(tok: _Token) -> str:
    return "end of input" if tok.kind == "eof" else f"'{tok.value}'"


def _tokenize(text: str):
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise FormulaError(
                f"unexpected character {text[pos]!r}", len(text[:pos].encode("utf-8")), text
            )
        if match.lastgroup != "ws":
            yield _Token(match.lastgroup, match.group(), pos)
        pos = match.end()
    yield _Token("eof", "", len(text))


def parse_formula(text: str) -> ModelFormula:
    """Parse formula text into a :class:`ModelFormula`.

    Raises
    ------
    FormulaError
        With the byte offset of the offending token.
    """
    if not text or not text.strip():
        raise FormulaError("empty formula", 0, text)
    parser = _Parser(text)
    if parser.is_list():
        raise parser.error(
            "multi-formula (distributional) models are not supported by the engine; "
            "use parse_formulas to read them"
        )
    f = parser.formula()
    if parser.peek().kind != "eof":
        raise parser.error(f"unexpected {_describe(parser.peek())}")
    return f


def parse_formulas(text: str) -> tuple[ModelFormula, ...]:
    """Parse a single formula or a ``list(...)`` of them.

    The first formula of a list names the response; the others are
    one-sided (``response == ""``), one per extra distribution parameter.
    """
    if not text or not text.strip():
        raise FormulaError("empty formula", 0, text)
    parser = _Parser(text)
    if parser.is_list():
        return parser.formula_list()
    return (parse_formula(text),)


def _print_smooth(s: SmoothSpec) -> str:
    parts = list(s.variables)
    if s.basis_code != "tp":
        parts.append(f'bs="{s.basis_code}"')
    if s.k is not None:
        parts.append(f"k={s.k}")
    if s.m != 2:
        parts.append(f"m={s.m}")
    return f"s({', '.join(parts)})"


def print_formula(f: ModelFormula) -> str:
    """Canonical text form; ``parse_formula(print_formula(f)) == f``."""
    terms = list(f.parametric) + [_print_smooth(s) for s in f.smooths]
    if not terms:
        rhs = "1" if f.intercept else "0"
    else:
        rhs = " + ".join(terms) + ("" if f.intercept else " - 1")
    return f"{f.response} ~ {rhs}" if f.response else f"~ {rhs}"


def print_formulas(fs) -> str:
    """Inverse of :func:`parse_formulas`."""
    fs = tuple(fs)
    if len(fs) == 1:
        return print_formula(fs[0])
    return "list(" + ", ".join(print_formula(f) for f in fs) + ")"
