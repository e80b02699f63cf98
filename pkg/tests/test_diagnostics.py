import dataclasses

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from gamforge.diagnostics import (appraise_data, band_coverage, qq_data, qq_normal,
                                  residual_histogram, residuals)
from gamforge.engine import model_edf


def test_gaussian_residual_types_coincide(gw_model):
    r = [residuals(gw_model, t) for t in ("deviance", "pearson", "response")]
    np.testing.assert_allclose(r[0], r[2], atol=1e-12)
    np.testing.assert_allclose(r[1], r[2], atol=1e-12)
    with pytest.raises(ValueError):
        residuals(gw_model, "working")


def test_perfect_fit_residuals_are_zero(gw_model):
    m = dataclasses.replace(gw_model, y=gw_model.fitted.copy())
    for t in ("deviance", "pearson", "response"):
        np.testing.assert_array_equal(residuals(m, t), 0.0)


def test_pearson_statistic_matches_scale(gw_model):
    r = residuals(gw_model, "pearson")
    assert np.sum(r ** 2) == pytest.approx((gw_model.n - model_edf(gw_model)) * gw_model.phi, rel=1e-8)


def test_poisson_residual_definitions(poisson_model):
    m = poisson_model
    np.testing.assert_allclose(residuals(m, "pearson"), (m.y - m.fitted) / np.sqrt(m.fitted))
    assert np.sum(residuals(m) ** 2) == pytest.approx(m.deviance, rel=1e-10)


def test_qq_normal_fixed_point():
    n = 40
    q = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    out = qq_normal(q[::-1])
    np.testing.assert_allclose(out["sample"], out["theoretical"], atol=1e-14)
    assert (out["band_lower"] <= out["theoretical"]).all() and (out["theoretical"] <= out["band_upper"]).all()


def test_qq_normal_band_matches_simulated_order_statistics():
    n = 15
    sims = np.sort(np.random.default_rng(0).standard_normal((40_000, n)), axis=1)
    out = qq_normal(np.zeros(n), level=0.9)
    np.testing.assert_allclose(out["band_lower"], np.quantile(sims, 0.05, axis=0), atol=0.03)
    np.testing.assert_allclose(out["band_upper"], np.quantile(sims, 0.95, axis=0), atol=0.03)


def test_qq_simulate_invariants(poisson_model):
    q = qq_data(poisson_model, n_sim=60, seed=4)
    assert len(q) == poisson_model.n
    assert list(q.columns) == ["theoretical", "sample", "band_lower", "band_upper"]
    assert np.all(np.diff(q["sample"]) >= 0)
    assert np.all(q["band_lower"] <= q["band_upper"])
    assert q.attrs["method"] == "simulate" and q.attrs["n_sim"] == 60
    pd.testing.assert_frame_equal(q, qq_data(poisson_model, n_sim=60, seed=4, workers=3))


def test_qq_bands_widen_with_level(gw_model):
    narrow = qq_data(gw_model, n_sim=80, level=0.5, seed=1)
    wide = qq_data(gw_model, n_sim=80, level=0.95, seed=1)
    assert np.all(wide["band_lower"] <= narrow["band_lower"])
    assert np.all(wide["band_upper"] >= narrow["band_upper"])


def test_qq_errors(gw_model):
    with pytest.raises(ValueError, match="n_sim"):
        qq_data(gw_model, n_sim=1, seed=0)
    with pytest.raises(ValueError):
        qq_data(gw_model, method="worm", seed=0)
    with pytest.raises(ValueError):
        qq_data(gw_model, level=1.0, seed=0)


def test_qq_normal_method_scales_by_phi(gw_model):
    q = qq_data(gw_model, method="normal")
    n = gw_model.n
    expected = np.sqrt(gw_model.phi) * stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    np.testing.assert_allclose(q["theoretical"], expected, rtol=1e-12)
    assert 0.85 <= band_coverage(q) <= 1.0


def test_histogram():
    r = np.random.default_rng(0).normal(size=333)
    h = residual_histogram(r, bins=30)
    assert h["count"].sum() == 333 and len(h) == 30
    np.testing.assert_allclose(h["bin_left"].iloc[1:].to_numpy(), h["bin_right"].iloc[:-1].to_numpy())
    assert h["bin_left"].iloc[0] == r.min() and h["bin_right"].iloc[-1] == r.max()
    with pytest.raises(ValueError):
        residual_histogram(r, bins=0)


def test_appraise_tables(poisson_model):
    m = poisson_model
    t = appraise_data(m, n_sim=20, bins=12, seed=2)
    assert set(t) == {"qq", "resid_vs_eta", "histogram", "obs_vs_fit"}
    np.testing.assert_allclose(t["resid_vs_eta"][".eta"], m.X @ m.beta, atol=1e-10)
    assert t["histogram"]["count"].sum() == m.n
    assert len(t["obs_vs_fit"]) == m.n
    np.testing.assert_array_equal(t["obs_vs_fit"][".observed"], m.y)
    again = appraise_data(m, n_sim=20, bins=12, seed=2)
    for k in t:
        pd.testing.assert_frame_equal(t[k], again[k])
