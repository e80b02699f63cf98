import dataclasses
import io
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from gamforge.cli import main, parse_grid, resolve_seed, CLIError
from gamforge.io import load_model, model_to_dict, save_model

from conftest import gu_wahba_data, surface_data


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    gu_wahba_data(1).to_csv(d / "gw.csv", index=False)
    surface_data(2).to_csv(d / "surf.csv", index=False)
    surface_data(5, n=5).to_csv(d / "rows.csv", index=False)
    assert main(["fit", "--data", str(d / "gw.csv"), "--formula", "y ~ s(x, k=10)",
                 "--out", str(d / "gw.json")]) == 0
    assert main(["fit", "--data", str(d / "surf.csv"), "--formula", "y ~ s(lat, lon) + z",
                 "--method", "REML", "--out", str(d / "surf.json")]) == 0
    return d


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fit_prints_overview(files, capsys):
    code, out, _ = run(["fit", "--data", files / "gw.csv", "--formula", "y ~ s(x, k=10)",
                        "--out", files / "again.json"], capsys)
    assert code == 0
    t = pd.read_csv(io.StringIO(out))
    assert list(t.columns) == ["term", "type", "k", "edf"]
    assert 2 <= t.loc[t.term == "s(x)", "edf"].iloc[0] <= 9
    assert (files / "again.json").read_bytes() == (files / "gw.json").read_bytes()


@pytest.mark.parametrize("formula,code,message", [
    ('y ~ s(x, bs = "sos", m = -1, k = 150)', 4, "unsupported basis: sos"),
    ("y ~ s(x", 2, "expected ')'"),
    ("y ~ s(depth)", 3, "missing column 'depth'"),
    ("y ~ s(x, k=500)", 4, "unique"),
])
def test_fit_exit_codes(files, capsys, formula, code, message):
    got, _, err = run(["fit", "--data", files / "gw.csv", "--formula", formula,
                       "--out", files / "bad.json"], capsys)
    assert got == code
    assert message in err


def test_missing_data_file(files, capsys):
    code, _, err = run(["fit", "--data", files / "nope.csv", "--formula", "y ~ x",
                        "--out", files / "bad.json"], capsys)
    assert code == 3 and "not found" in err


def test_missing_cell_is_data_error(files, capsys):
    (files / "na.csv").write_text("x,y\n1,2\n2,\n3,4\n")
    code, _, err = run(["fit", "--data", files / "na.csv", "--formula", "y ~ x",
                        "--out", files / "bad.json"], capsys)
    assert code == 3 and "column 'y'" in err


def test_schema_mismatch(files, capsys, gw_model):
    d = model_to_dict(gw_model)
    d["version"] = 2
    (files / "v2.json").write_text(__import__("json").dumps(d))
    code, _, err = run(["inspect", "summary", "--model", files / "v2.json"], capsys)
    assert code == 3 and "schema version" in err


def test_inspect_penalty_linear_rows_zero(files, capsys):
    code, out, _ = run(["inspect", "penalty", "--model", files / "gw.json",
                        "--svg", files / "pen.svg"], capsys)
    assert code == 0
    t = pd.read_csv(io.StringIO(out))
    assert len(t) == 81
    lin = t[(t[".row"] == "F9") | (t[".col"] == "F9")]
    assert len(lin) == 17 and np.max(np.abs(lin[".value"])) <= 1e-12
    assert (files / "pen.svg").read_text().count('class="cell"') == 81


def test_inspect_slice(files, capsys):
    code, out, _ = run(["inspect", "slice", "--model", files / "surf.json",
                        "--grid", "lat=40:50:0.5", "--grid", "lon=-50:-40:0.5"], capsys)
    assert code == 0
    lines = out.strip().split("\n")
    assert len(lines) == 442 and lines[0] == "z,lat,lon"
    code, _, err = run(["inspect", "slice", "--model", files / "surf.json", "--grid", "lat=40:50"],
                       capsys)
    assert code == 3 and "name=lower:upper:by" in err


def test_inspect_predict_matches_training_fit(files, capsys):
    code, out, _ = run(["inspect", "predict", "--model", files / "gw.json",
                        "--data", files / "gw.csv"], capsys)
    assert code == 0
    t = pd.read_csv(io.StringIO(out))
    m = load_model(files / "gw.json")
    np.testing.assert_allclose(t[".fitted"], m.fitted, rtol=0, atol=1e-10)


def test_inspect_predict_terms(files, capsys):
    code, out, _ = run(["inspect", "predict", "--model", files / "surf.json",
                        "--terms", "(Intercept),s(lat,lon)"], capsys)
    assert code == 0
    code, _, err = run(["inspect", "predict", "--model", files / "surf.json",
                        "--terms", "s(depth)"], capsys)
    assert code == 3 and "unknown term" in err


def test_inspect_smooths_and_basis(files, capsys):
    code, out, _ = run(["inspect", "smooths", "--model", files / "surf.json", "--select", "s(lat,lon)",
                        "--n", 10, "--svg", files / "surf.svg"], capsys)
    assert code == 0
    t = pd.read_csv(io.StringIO(out))
    assert len(t) == 100 and {".lower_ci", ".upper_ci"} <= set(t.columns)
    code, out, _ = run(["inspect", "basis", "--model", files / "gw.json", "--n", 25,
                        "--svg", files / "basis.svg"], capsys)
    assert code == 0 and len(pd.read_csv(io.StringIO(out))) == 25 * 9
    assert (files / "basis.svg").read_text().count("<polyline") == 9
    code, _, err = run(["inspect", "smooths", "--model", files / "gw.json", "--select", "s(z)"],
                       capsys)
    assert code == 3 and "available: s(x)" in err


def test_sample_summarise_header(files, capsys):
    code, out, _ = run(["sample", "--model", files / "surf.json", "--n", 200, "--seed", 342,
                        "--terms", "(Intercept),s(lat,lon)", "--summarise"], capsys)
    assert code == 0
    assert out.split("\n")[0] == "value,.lower,.upper,.width,.point,.interval"
    assert out.split("\n")[1].endswith(",0.95,median,qi")


def test_sample_degenerate_summary_equals_point_mean(files, capsys, gw_model):
    m0 = dataclasses.replace(gw_model, vb=np.zeros_like(gw_model.vb))
    save_model(m0, files / "vb0.json")
    code, out, _ = run(["sample", "--model", files / "vb0.json", "--n", 1, "--seed", 5,
                        "--summarise"], capsys)
    assert code == 0
    t = pd.read_csv(io.StringIO(out))
    assert t["value"].iloc[0] == pytest.approx(np.mean(gw_model.fitted), rel=1e-14)
    assert t[".lower"].iloc[0] == t["value"].iloc[0] == t[".upper"].iloc[0]


@pytest.mark.parametrize("extra", [[], ["--type", "posterior"], ["--type", "predicted"],
                                   ["--unconditional"]])
def test_sample_bytes_independent_of_workers(files, capsys, extra):
    base = ["sample", "--model", files / "surf.json", "--data", files / "rows.csv", "--n", 2100,
            "--seed", 9, *extra]
    outs = [run(base + ["--workers", w], capsys)[1] for w in (1, 3)]
    assert outs[0] == outs[1] and len(outs[0]) > 0


def test_sample_errors(files, capsys):
    code, _, err = run(["sample", "--model", files / "gw.json", "--terms", "s(q)", "--n", 2], capsys)
    assert code == 3
    code, _, err = run(["sample", "--model", files / "gw.json", "--n", 0], capsys)
    assert code == 5


def test_diagnose_outputs(files, capsys):
    outs = []
    for w in (1, 2):
        d = files / f"diag{w}"
        code, _, _ = run(["diagnose", "--model", files / "gw.json", "--out-dir", d, "--seed", 3,
                          "--n-sim", 30, "--workers", w], capsys)
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert sorted(outs[0]) == ["appraise.svg", "histogram.csv", "obs_vs_fit.csv", "qq.csv",
                               "resid_vs_eta.csv"]
    assert outs[0] == outs[1]
    qq = pd.read_csv(files / "diag1" / "qq.csv")
    assert list(qq.columns) == ["theoretical", "sample", "band_lower", "band_upper"]


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("GAMFORGE_SEED", raising=False)
    assert resolve_seed(None) == 0
    monkeypatch.setenv("GAMFORGE_SEED", "17")
    assert resolve_seed(None) == 17 and resolve_seed(4) == 4
    monkeypatch.setenv("GAMFORGE_SEED", "abc")
    with pytest.raises(CLIError):
        resolve_seed(None)


def test_env_seed_matches_flag(files, capsys, monkeypatch):
    base = ["sample", "--model", files / "gw.json", "--n", 50]
    flag = run(base + ["--seed", 21], capsys)[1]
    monkeypatch.setenv("GAMFORGE_SEED", "21")
    assert run(base, capsys)[1] == flag


def test_parse_grid():
    name, g = parse_grid("lat=40:50:0.5")
    assert name == "lat" and g.size == 21
    with pytest.raises(CLIError):
        parse_grid("lat=50:40:1")


def test_console_entry_point(files):
    r = subprocess.run([sys.executable, "-m", "gamforge.cli", "inspect", "summary", "--model",
                        str(files / "gw.json")], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("term,type,k,edf")
