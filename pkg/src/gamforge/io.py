"""Strict CSV input/output and versioned model files.

Model files are JSON objects::

    {"format": "gamforge-model", "version": 1,
     "formula": ..., "family": ..., "link": ..., "method": ...,
     "control": {...}, "coef_names": [...], "beta": [...], "vb": [[...]],
     "lam": [...], "phi": ..., "edf_per_coef": [...],
     "term_map": {label: [start, stop]},
     "smooths": {label: basis}, "penalty_scale": {label: scale},
     "data": {column: [...]}, "weights": [...], "fitted": [...],
     "linear_predictor": [...], "working_weights": [...],
     "deviance": ..., "null_deviance": ..., "converged": ..., "score": ...}

Floats are written with Python's shortest round-trip repr, so a loaded
model reproduces its predictions exactly.
"""
from __future__ import annotations

import csv
import io as _io
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import family as fam
from .basis import basis_from_dict, basis_to_dict
from .engine import DataError, FitControl, FittedGam, make_penalty, predict_matrix
from .formula import parse_formula, print_formula

FORMAT = "gamforge-model"
SCHEMA_VERSION = 1
_NA_TOKENS = {"", "NA", "NaN", "nan", "NULL", "null", "N/A", "na"}


class ModelFileError(ValueError):
    """A model file is malformed or has an unsupported schema version."""


def read_csv(path) -> pd.DataFrame:
    """Read an RFC 4180 CSV with a header row; missing cells are errors.

    Columns whose every cell parses as a number become float columns.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from None
    # pandas renames repeated headers ("x", "x.1"), so check the raw header row
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    seen = set()
    for name in header:
        if name in seen:
            raise DataError(f"duplicate column '{name}'")
        seen.add(name)
    out = {}
    for col in raw.columns:
        cells = raw[col].str.strip()
        bad = cells.isin(_NA_TOKENS)
        if bad.any():
            row = int(np.argmax(bad.to_numpy())) + 2  # 1-based, after the header
            raise DataError(f"missing value in column '{col}' at line {row}")
        num = pd.to_numeric(cells, errors="coerce")
        out[col] = num.astype(float) if num.notna().all() else raw[col]
    return pd.DataFrame(out, columns=raw.columns)


def to_csv_text(df: pd.DataFrame) -> str:
    buf = _io.StringIO()
    df.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def write_csv(df: pd.DataFrame, path=None) -> None:
    """Write ``df`` to ``path`` (stdout when None or '-')."""
    text = to_csv_text(df)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model: FittedGam) -> dict:
    return {
        "format": FORMAT,
        "version": SCHEMA_VERSION,
        "formula": print_formula(model.formula),
        "family": model.family.name,
        "link": model.family.link,
        "method": model.method,
        "control": asdict(model.control),
        "coef_names": list(model.coef_names),
        "beta": _arr(model.beta),
        "vb": _arr(model.vb),
        "lam": _arr(model.lam),
        "phi": float(model.phi),
        "edf_per_coef": _arr(model.edf_per_coef),
        "term_map": {k: [int(a), int(b)] for k, (a, b) in model.term_map.items()},
        "smooths": {k: basis_to_dict(b) for k, b in model.smooths.items()},
        "penalty_scale": {p.label: float(p.scale) for p in model.penalties},
        "data": {c: _arr(model.data[c]) for c in model.data.columns},
        "weights": _arr(model.weights),
        "fitted": _arr(model.fitted),
        "linear_predictor": _arr(model.linear_predictor),
        "working_weights": _arr(model.working_weights),
        "deviance": float(model.deviance),
        "null_deviance": float(model.null_deviance),
        "converged": bool(model.converged),
        "score": float(model.score),
    }


def save_model(model: FittedGam, path) -> None:
    text = json.dumps(model_to_dict(model), separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def model_from_dict(d: dict) -> FittedGam:
    """Rebuild a fitted model and check it against its stored fit."""
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ModelFileError("not a gamforge model file")
    if d.get("version") != SCHEMA_VERSION:
        raise ModelFileError(
            f"model schema version {d.get('version')!r} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        formula = parse_formula(d["formula"])
        family = fam.Family(d["family"], d["link"])
        data = pd.DataFrame({c: np.asarray(v, dtype=float) for c, v in d["data"].items()})
        term_map = {k: (int(a), int(b)) for k, (a, b) in d["term_map"].items()}
        smooths = {}
        for s in formula.smooths:
            x_fit = data[list(s.variables)].to_numpy()
            smooths[s.label] = basis_from_dict(d["smooths"][s.label], x_fit)
        penalties = []
        for s in formula.smooths:
            b, (a, _) = smooths[s.label], term_map[s.label]
            scale = float(d["penalty_scale"][s.label])
            penalties.append(make_penalty(b.penalty / scale, a, s.label, scale))
        X = predict_matrix(formula, term_map, smooths, data)
        beta = np.asarray(d["beta"], dtype=float)
        p = beta.size
        vb = np.asarray(d["vb"], dtype=float).reshape(p, p)
        model = FittedGam(
            formula=formula, family=family, method=d["method"], beta=beta, vb=vb,
            lam=np.asarray(d["lam"], dtype=float), phi=float(d["phi"]),
            edf_per_coef=np.asarray(d["edf_per_coef"], dtype=float), term_map=term_map,
            smooths=smooths, penalties=penalties, coef_names=list(d["coef_names"]), X=X,
            y=data[formula.response].to_numpy(), weights=np.asarray(d["weights"], dtype=float),
            data=data, fitted=np.asarray(d["fitted"], dtype=float),
            linear_predictor=np.asarray(d["linear_predictor"], dtype=float),
            working_weights=np.asarray(d["working_weights"], dtype=float),
            deviance=float(d["deviance"]), null_deviance=float(d["null_deviance"]),
            converged=bool(d["converged"]), score=float(d["score"]),
            control=FitControl(**d["control"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"invalid model file: {exc}") from None
    if X.shape[1] != p or len(model.coef_names) != p:
        raise ModelFileError("coefficient count does not match the model design")
    eta = X @ beta
    if not np.allclose(eta, model.linear_predictor, rtol=1e-8, atol=1e-8):
        raise ModelFileError("stored linear predictor does not match the rebuilt design")
    return model


def load_model(path) -> FittedGam:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(d)
