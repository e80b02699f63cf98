"""Handwritten formulas with the abstract syntax they must parse to.

Each entry is ``(text, expected)`` where ``expected`` is a tuple of
``ModelFormula`` (one per linear predictor).
"""
from gamforge.formula import ModelFormula as F
from gamforge.formula import SmoothSpec as S

# formula argument of the two model-fitting code blocks, line breaks and comments kept
CHL_M1 = '''chl ~ s(lat, lon, bs = "sos", m = -1, k = 150) +
    s(jul.day, bs = "cr", k = 20) +
    s(bath, k = 10)'''

CHL_M2 = '''list(
    chl ~ s(lat, lon, bs = "sos", m = -1, k = 150) + # location
      s(jul.day, bs = "cr", k = 20) +
      s(bath, k = 10),
    ~ s(lat, lon, bs = "sos", m = -1, k = 100) +     # power
      s(jul.day, bs = "cr", k = 20) +
      s(bath, k = 10),
    ~ s(lat, lon, bs = "sos", m = -1, k = 100) +     # scale
      s(jul.day, bs = "cr", k = 20) +
      s(bath, k = 10))'''

_JD = S(("jul.day",), "cr", 20)
_BATH = S(("bath",), "tp", 10)


def _sos(k):
    return S(("lat", "lon"), "sos", k, -1)


CORPUS = [
    (CHL_M1, (F("chl", (), (_sos(150), _JD, _BATH)),)),
    (CHL_M2, (
        F("chl", (), (_sos(150), _JD, _BATH)),
        F("", (), (_sos(100), _JD, _BATH)),
        F("", (), (_sos(100), _JD, _BATH)),
    )),
    ("y ~ x", (F("y", ("x",)),)),
    ("y~x+z", (F("y", ("x", "z")),)),
    ("y ~ s(x)", (F("y", (), (S(("x",)),)),)),
    ("y ~ s(x, k = 10)", (F("y", (), (S(("x",), "tp", 10),)),)),
    ('y ~ s(x, bs = "cr")', (F("y", (), (S(("x",), "cr"),)),)),
    ('y ~ s(x, k=5, bs="cr")', (F("y", (), (S(("x",), "cr", 5),)),)),
    ('y ~ s(x, m = 3, bs = "tp", k = 12)', (F("y", (), (S(("x",), "tp", 12, 3),)),)),
    ("y ~ s(lat, lon)", (F("y", (), (S(("lat", "lon")),)),)),
    ("y ~ s(lat,lon, k=40)", (F("y", (), (S(("lat", "lon"), "tp", 40),)),)),
    ("y ~ x - 1", (F("y", ("x",), (), False),)),
    ("y ~ 0 + x", (F("y", ("x",), (), False),)),
    ("y ~ 1", (F("y", (), (), True),)),
    ("y ~ x + 0 + 1", (F("y", ("x",), (), True),)),
    ("count ~ s(depth) + s(temp) + year", (F("count", ("year",), (S(("depth",)), S(("temp",)))),)),
    ("y ~ x + x", (F("y", ("x",)),)),
    ("  y\t~\n s( x ,k=7 )  ", (F("y", (), (S(("x",), "tp", 7),)),)),
    ("y ~ s(x) # trailing comment", (F("y", (), (S(("x",)),)),)),
    ("y.obs ~ s(x.1, bs='cr')".replace("'", '"'), (F("y.obs", (), (S(("x.1",), "cr"),)),)),
    ("resp_2 ~ a_b + s(c_d, k=4, bs=\"cr\")", (F("resp_2", ("a_b",), (S(("c_d",), "cr", 4),)),)),
    ('y ~ s(x, bs = "ds", k = 20)', (F("y", (), (S(("x",), "ds", 20),)),)),
    ("y ~ s(x) + s(x, z)", (F("y", (), (S(("x",)), S(("x", "z")))),)),
    ("list(y ~ s(x), ~ s(x, k = 5))", (F("y", (), (S(("x",)),)), F("", (), (S(("x",), "tp", 5),)))),
    ("y ~ s(x, k=10) - 1 + z", (F("y", ("z",), (S(("x",), "tp", 10),), False),)),
]


_NAME_CHARS = list("abcxyz_.0123")
_RESERVED = ("s", "te", "ti", "t2", "list", "offset")


def random_formula(rng):
    """A random valid single-predictor formula drawn from ``rng`` (numpy Generator)."""
    pool = set()
    while len(pool) < int(rng.integers(2, 8)):
        name = "v" + "".join(rng.choice(_NAME_CHARS, size=int(rng.integers(1, 6))))
        if name not in _RESERVED:
            pool.add(name)
    names = sorted(pool)
    rng.shuffle(names)
    response, pool = names[0], names[1:]
    n_par = int(rng.integers(0, min(3, len(pool)) + 1))
    parametric = tuple(rng.choice(pool, size=n_par, replace=False).tolist())
    smooths, labels = [], set()
    for _ in range(int(rng.integers(0, 4))):
        d = int(rng.integers(1, min(2, len(pool)) + 1))
        variables = tuple(rng.choice(pool, size=d, replace=False).tolist())
        code = str(rng.choice(["tp", "cr"])) if d == 1 else "tp"
        m = 2 if code == "cr" else int(rng.choice([2, 2, 3]))
        null_dim = S(variables, code, None, m).null_dim
        k = None if rng.random() < 0.3 else int(rng.integers(null_dim + 1, 61))
        spec = S(variables, code, k, m)
        if spec.label in labels:
            continue
        labels.add(spec.label)
        smooths.append(spec)
    intercept = bool(rng.random() < 0.7) if (parametric or smooths) else True
    return F(response, parametric, tuple(smooths), intercept)
