"""``gamforge`` command-line tool.

Exit codes: 0 success, 2 formula error, 3 data or model-file error,
4 fitting failure, 5 sampling failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import pandas as pd

from . import diagnostics, inspect, posterior
from .basis import BasisError, basis_tidy, penalty_tidy
from .engine import DataError, FitControl, FitError, fit, overview
from .formula import FormulaError, UnsupportedBasisWarning
from .io import ModelFileError, load_model, read_csv, save_model, to_csv_text, write_csv
from .render import PlotError, PlotSpec, render_svg

EXIT_OK, EXIT_FORMULA, EXIT_DATA, EXIT_FIT, EXIT_SAMPLING = 0, 2, 3, 4, 5

log = logging.getLogger("gamforge")


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def resolve_seed(seed: int | None) -> int:
    """Explicit seed, else ``GAMFORGE_SEED``, else 0."""
    if seed is not None:
        return seed
    env = os.environ.get("GAMFORGE_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise CLIError(f"GAMFORGE_SEED must be an integer, got {env!r}", EXIT_DATA) from None


def parse_grid(text: str) -> tuple[str, object]:
    """``name=lower:upper:by`` into ``(name, grid)``."""
    name, sep, spec = text.partition("=")
    parts = spec.split(":")
    if not sep or not name.strip() or len(parts) != 3:
        raise CLIError(f"grid '{text}' must look like name=lower:upper:by", EXIT_DATA)
    try:
        lower, upper, by = (float(p) for p in parts)
        return name.strip(), inspect.evenly(lower=lower, upper=upper, by=by)
    except ValueError as exc:
        raise CLIError(f"bad grid '{text}': {exc}", EXIT_DATA) from None


def _read_data(path) -> pd.DataFrame:
    try:
        return read_csv(path)
    except FileNotFoundError:
        raise CLIError(f"data file not found: {path}", EXIT_DATA) from None


def _load(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CLIError(f"model file not found: {path}", EXIT_DATA) from None


def _terms(text: str | None):
    if not text:
        return None
    return [t.strip() for t in _split_terms(text) if t.strip()]


def _split_terms(text: str) -> list[str]:
    # split on commas outside parentheses so "s(lat,lon)" stays whole
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur.append(ch)
    out.append("".join(cur))
    return out


# commands -------------------------------------------------------------------------

def cmd_fit(args) -> int:
    data = _read_data(args.data)
    control = FitControl(seed=resolve_seed(args.seed))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnsupportedBasisWarning)
            model = fit(args.formula, data, family=args.family, method=args.method,
                        control=control)
    except (FormulaError, DataError):
        raise
    except Exception as exc:
        raise CLIError(f"fit failed: {exc}", EXIT_FIT) from None
    save_model(model, args.out)
    write_csv(overview(model), None)
    return EXIT_OK


def _select(model, select):
    labels = model.smooth_labels
    if not select:
        return labels
    chosen = [s.strip().replace(" ", "") for s in _split_terms(select)]
    for s in chosen:
        if s not in labels:
            raise CLIError(f"unknown smooth '{s}'; available: {', '.join(labels) or 'none'}",
                           EXIT_DATA)
    return chosen


def _svg(table, kind, path, title=""):
    if path:
        render_svg(table, PlotSpec(kind, path=path, title=title))


def cmd_inspect(args) -> int:
    model = _load(args.model)
    what = args.what
    if what == "summary":
        write_csv(overview(model), args.out)
    elif what == "smooths":
        labels = _select(model, args.select)
        data = _read_data(args.data) if args.data else None
        table = inspect.add_confint(inspect.smooth_estimates(model, labels, n=args.n, data=data),
                                    args.coverage)
        write_csv(table, args.out)
        if args.svg:
            if len(labels) != 1:
                raise CLIError("--svg needs exactly one smooth (use --select)", EXIT_DATA)
            dims = len(model.smooths[labels[0]].variables)
            kind = "smooth_1d_ribbon" if dims == 1 else "smooth_2d_heatmap"
            cols = [c for c in table.columns if c != ".extrapolated"]
            _svg(table[cols], kind, args.svg, labels[0])
    elif what == "basis":
        labels = _select(model, args.select)
        parts = [basis_tidy(model.smooths[s], n_eval=args.n, label=s) for s in labels]
        table = pd.concat(parts, ignore_index=True)
        write_csv(table, args.out)
        if args.svg:
            if len(labels) != 1 or len(model.smooths[labels[0]].variables) != 1:
                raise CLIError("--svg needs exactly one one-dimensional smooth", EXIT_DATA)
            _svg(table.drop(columns=[".smooth", ".type", ".by"]), "basis_curves", args.svg,
                 labels[0])
    elif what == "penalty":
        labels = _select(model, args.select)
        table = pd.concat([penalty_tidy(model.smooths[s], s) for s in labels], ignore_index=True)
        write_csv(table, args.out)
        if args.svg:
            if len(labels) != 1:
                raise CLIError("--svg needs exactly one smooth (use --select)", EXIT_DATA)
            _svg(table, "penalty_heatmap", args.svg, labels[0])
    elif what == "predict":
        data = _read_data(args.data) if args.data else None
        table = inspect.fitted_values(model, data, _terms(args.terms), args.scale, args.coverage)
        write_csv(table, args.out)
    elif what == "slice":
        grids = dict(parse_grid(g) for g in args.grid or [])
        write_csv(inspect.data_slice(model, grids), args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    model = _load(args.model)
    data = _read_data(args.data) if args.data else None
    seed = resolve_seed(args.seed)
    terms = _terms(args.terms)
    try:
        if args.type == "fitted":
            draws = posterior.fitted_samples(model, data, terms, args.n, args.method,
                                             args.unconditional, seed, args.workers)
            column = ".fitted"
        else:
            if terms is not None:
                raise CLIError("--terms applies to fitted samples only", EXIT_DATA)
            if args.type == "predicted":
                draws = posterior.predicted_samples(model, data, args.n, seed, args.workers)
            else:
                draws = posterior.posterior_samples(model, data, args.n, args.method,
                                                    args.unconditional, seed, args.workers)
            column = ".response"
    except (posterior.SamplingError, FloatingPointError) as exc:
        raise CLIError(f"sampling failed: {exc}", EXIT_SAMPLING) from None
    except ValueError as exc:
        if isinstance(exc, (DataError, BasisError)):
            raise
        raise CLIError(f"sampling failed: {exc}", EXIT_SAMPLING) from None
    if args.summarise is not None:
        means = posterior.draw_means(draws, column)
        write_csv(posterior.median_qi(means.to_numpy(), args.summarise, name="value"), args.out)
    else:
        write_csv(draws, args.out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    model = _load(args.model)
    seed = resolve_seed(args.seed)
    try:
        tables = diagnostics.appraise_data(model, args.method, args.n_sim, args.bins, seed,
                                           args.type, args.level, args.workers)
    except ValueError as exc:
        raise CLIError(f"diagnostics failed: {exc}", EXIT_SAMPLING) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, table in tables.items():
        (out / f"{name}.csv").write_text(to_csv_text(table), encoding="utf-8")
    render_svg(tables, PlotSpec("appraise_grid", width=900, height=700,
                                path=str(out / "appraise.svg")))
    return EXIT_OK


# parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gamforge", description="Fit and inspect generalized additive models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model from CSV data")
    f.add_argument("--data", required=True, help="input CSV with a header row")
    f.add_argument("--formula", required=True, help='e.g. "y ~ s(x, k = 10) + z"')
    f.add_argument("--family", default="gaussian",
                   choices=["gaussian", "poisson", "binomial", "gamma"])
    f.add_argument("--method", default="gcv", type=str.lower, choices=["gcv", "reml"])
    f.add_argument("--out", required=True, help="model JSON to write")
    f.add_argument("--seed", type=int, default=None)
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("inspect", help="tidy outputs from a fitted model")
    isub = i.add_subparsers(dest="what", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True)
    common.add_argument("--out", default=None, help="output CSV (stdout by default)")
    for name, helptext in (("summary", "term overview"),
                           ("smooths", "smooth estimates with credible intervals"),
                           ("basis", "basis functions on a grid"),
                           ("penalty", "penalty matrices in long form"),
                           ("predict", "fitted values"),
                           ("slice", "covariate slice through the data")):
        sp = isub.add_parser(name, parents=[common], help=helptext)
        if name in ("smooths", "basis", "penalty"):
            sp.add_argument("--select", default=None, help="comma-separated smooth labels")
        if name in ("smooths", "basis", "penalty"):
            sp.add_argument("--svg", default=None, help="also render an SVG figure")
        if name in ("smooths", "basis"):
            sp.add_argument("--n", type=int, default=100, help="grid points per covariate")
        if name in ("smooths", "predict"):
            sp.add_argument("--data", default=None)
            sp.add_argument("--coverage", type=float, default=0.95)
        if name == "predict":
            sp.add_argument("--terms", default=None, help='e.g. "(Intercept),s(lat,lon)"')
            sp.add_argument("--scale", default="response", choices=["response", "link"])
        if name == "slice":
            sp.add_argument("--grid", action="append", help="name=lower:upper:by (repeatable)")
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("sample", help="posterior draws")
    s.add_argument("--model", required=True)
    s.add_argument("--data", default=None, help="prediction rows (training data by default)")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--type", default="fitted", choices=["fitted", "predicted", "posterior"])
    s.add_argument("--method", default="gaussian", choices=list(posterior.METHODS))
    s.add_argument("--unconditional", action="store_true")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--terms", default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--summarise", "--summarize", type=float, nargs="?", const=0.95, default=None,
                   metavar="WIDTH", help="median_qi of the per-draw mean")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("diagnose", help="appraisal tables and a four-panel SVG")
    d.add_argument("--model", required=True)
    d.add_argument("--out-dir", required=True)
    d.add_argument("--method", default="simulate", choices=["simulate", "normal"])
    d.add_argument("--n-sim", type=int, default=50)
    d.add_argument("--bins", type=int, default=30)
    d.add_argument("--level", type=float, default=0.95)
    d.add_argument("--type", default="deviance", choices=list(diagnostics.RESIDUAL_TYPES))
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--workers", type=int, default=1)
    d.set_defaults(func=cmd_diagnose)
    return p


def _code_for(exc: Exception) -> int:
    if isinstance(exc, FormulaError):
        return EXIT_FORMULA
    if isinstance(exc, (FitError, BasisError)):
        return EXIT_FIT
    if isinstance(exc, posterior.SamplingError):
        return EXIT_SAMPLING
    if isinstance(exc, (DataError, ModelFileError, PlotError, KeyError, ValueError, OSError)):
        return EXIT_DATA
    return EXIT_FIT


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.showwarning = _show_warning
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # mapped to the documented exit codes
        code = _code_for(exc)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code


if __name__ == "__main__":
    sys.exit(main())
