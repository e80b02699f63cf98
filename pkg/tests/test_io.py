import json

import numpy as np
import pandas as pd
import pytest

from gamforge.engine import DataError
from gamforge.inspect import fitted_values, smooth_estimates
from gamforge.io import (ModelFileError, load_model, model_from_dict, model_to_dict, read_csv,
                         save_model, to_csv_text, write_csv)
from gamforge.posterior import fitted_samples


@pytest.mark.parametrize("fixture", ["gw_model", "surface_model", "poisson_model"])
def test_model_roundtrip_is_exact(fixture, request, tmp_path):
    m = request.getfixturevalue(fixture)
    path = tmp_path / "m.json"
    save_model(m, path)
    m2 = load_model(path)
    np.testing.assert_array_equal(m2.beta, m.beta)
    np.testing.assert_array_equal(m2.vb, m.vb)
    np.testing.assert_array_equal(m2.X, m.X)
    assert m2.term_map == m.term_map and m2.family == m.family and m2.formula == m.formula
    pd.testing.assert_frame_equal(fitted_values(m2), fitted_values(m))
    pd.testing.assert_frame_equal(smooth_estimates(m2, n=15), smooth_estimates(m, n=15))
    pd.testing.assert_frame_equal(fitted_samples(m2, n=5, seed=3), fitted_samples(m, n=5, seed=3))
    for p, q in zip(m2.penalties, m.penalties):
        np.testing.assert_allclose(p.S, q.S, rtol=1e-12, atol=1e-14)
    save_model(m2, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_schema_version_mismatch(gw_model):
    d = model_to_dict(gw_model)
    d["version"] = 99
    with pytest.raises(ModelFileError, match="version 99"):
        model_from_dict(d)
    with pytest.raises(ModelFileError, match="not a gamforge"):
        model_from_dict({"format": "other"})


def test_tampered_model_is_rejected(gw_model):
    d = model_to_dict(gw_model)
    d["beta"][1] += 1.0
    with pytest.raises(ModelFileError, match="linear predictor"):
        model_from_dict(d)
    d = model_to_dict(gw_model)
    del d["vb"]
    with pytest.raises(ModelFileError, match="invalid"):
        model_from_dict(d)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ModelFileError, match="JSON"):
        load_model(p)


def test_read_csv_strict(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y,g\n1,2.5,a\n3,4e-1,b\n")
    d = read_csv(p)
    assert d["x"].dtype == float and d["y"].tolist() == [2.5, 0.4] and d["g"].tolist() == ["a", "b"]
    p.write_text("x,y\n1,2\n3,NA\n")
    with pytest.raises(DataError, match="column 'y' at line 3"):
        read_csv(p)
    p.write_text("x,y\n1,\n")
    with pytest.raises(DataError, match="missing value"):
        read_csv(p)
    p.write_text("x,x\n1,2\n")
    with pytest.raises(DataError, match="duplicate"):
        read_csv(p)
    p.write_text("")
    with pytest.raises(DataError):
        read_csv(p)


def test_csv_text_roundtrip(tmp_path, capsys):
    df = pd.DataFrame({"a": [0.1, 1 / 3, -2e-17], "b": ["u", "v", "w"]})
    text = to_csv_text(df)
    assert text.splitlines()[0] == "a,b" and "\r" not in text
    write_csv(df, tmp_path / "o.csv")
    back = read_csv(tmp_path / "o.csv")
    np.testing.assert_array_equal(back["a"], df["a"])
    write_csv(df)
    assert capsys.readouterr().out == text


def test_model_file_is_compact_json(gw_model, tmp_path):
    save_model(gw_model, tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["format"] == "gamforge-model" and d["version"] == 1
    assert d["formula"] == "y ~ s(x, k=10)"
    assert set(d["smooths"]) == {"s(x)"}
