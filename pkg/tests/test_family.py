import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gamforge import family as fam
from gamforge.family import DomainError, Family, get_family


def _saturated_gap(f, y, mu, phi):
    """Deviance from the scipy log likelihood: 2 phi (l(y; y) - l(y; mu))."""
    def ll(m):
        if f.name == "gaussian":
            return stats.norm.logpdf(y, m, np.sqrt(phi))
        if f.name == "poisson":
            return stats.poisson.logpmf(y, m)
        if f.name == "binomial":
            return stats.bernoulli.logpmf(y, m)
        return stats.gamma.logpdf(y, 1 / phi, scale=m * phi)
    if f.name == "binomial":
        # saturated binomial log likelihood is zero for 0/1 data
        return -2 * ll(mu)
    return 2 * phi * (ll(y) - ll(mu))


@pytest.mark.parametrize("name", fam.FAMILIES)
def test_unit_deviance_matches_scipy_likelihood(name):
    rng = np.random.default_rng(1)
    f = get_family(name)
    mu = {"gaussian": rng.normal(size=50), "poisson": rng.uniform(0.2, 8, 50),
          "binomial": rng.uniform(0.05, 0.95, 50), "gamma": rng.uniform(0.5, 4, 50)}[name]
    phi = 1.0 if f.fixed_scale else 0.7
    y = fam.simulate_response(f, mu, phi, rng)
    np.testing.assert_allclose(fam.unit_deviance(f, y, mu), _saturated_gap(f, y, mu, phi),
                               rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("name", fam.FAMILIES)
def test_log_likelihood_matches_scipy(name):
    rng = np.random.default_rng(2)
    f = get_family(name)
    mu = rng.uniform(0.1, 0.9, 40) * (1 if name == "binomial" else 5)
    phi = 1.0 if f.fixed_scale else 1.3
    y = fam.simulate_response(f, mu, phi, rng)
    oracle = {
        "gaussian": lambda: stats.norm.logpdf(y, mu, np.sqrt(phi)),
        "poisson": lambda: stats.poisson.logpmf(y, mu),
        "binomial": lambda: stats.bernoulli.logpmf(y, mu),
        "gamma": lambda: stats.gamma.logpdf(y, 1 / phi, scale=mu * phi),
    }[name]()
    assert fam.log_likelihood(f, y, mu, phi) == pytest.approx(oracle.sum(), rel=1e-12)


@pytest.mark.parametrize("name,link", [("gaussian", "identity"), ("poisson", "log"),
                                       ("binomial", "logit"), ("gamma", "log"),
                                       ("gaussian", "log")])
def test_link_inverse_and_derivative(name, link):
    f = Family(name, link)
    eta = np.linspace(-3, 3, 25)
    mu = f.inv_link(eta)
    np.testing.assert_allclose(f.link_eval(mu), eta, atol=1e-12)
    h = 1e-6
    fd = (f.inv_link(eta + h) - f.inv_link(eta - h)) / (2 * h)
    np.testing.assert_allclose(f.dmu_deta(eta), fd, rtol=1e-7)


def test_defaults_and_unknowns():
    assert get_family("poisson").link == "log"
    assert get_family("binomial").link == "logit"
    assert get_family("gamma").link == "log"
    assert get_family("poisson").fixed_scale and not get_family("gamma").fixed_scale
    with pytest.raises(ValueError, match="unknown family"):
        get_family("tweedie")
    with pytest.raises(ValueError, match="unknown link"):
        get_family("gaussian", "probit")


@pytest.mark.parametrize("name,y", [("poisson", [1.0, -1.0]), ("poisson", [0.5]),
                                    ("binomial", [0.0, 2.0]), ("gamma", [0.0, 1.0]),
                                    ("gaussian", [np.nan])])
def test_response_domain_errors(name, y):
    with pytest.raises(DomainError):
        fam.validate_response(get_family(name), y)


def test_link_domain_errors():
    with pytest.raises(DomainError):
        get_family("poisson").link_eval([0.0])
    with pytest.raises(DomainError):
        get_family("binomial").link_eval([1.0])
    with pytest.raises(DomainError):
        get_family("gamma").variance([-1.0])
    with pytest.raises(DomainError):
        fam.simulate_response(get_family("poisson"), [1.0], 2.0, np.random.default_rng(0))


def test_variance_functions():
    mu = np.array([0.2, 0.5, 2.0])
    np.testing.assert_array_equal(get_family("gaussian").variance(mu), 1.0)
    np.testing.assert_array_equal(get_family("poisson").variance(mu), mu)
    np.testing.assert_allclose(get_family("gamma").variance(mu), mu ** 2)
    np.testing.assert_allclose(get_family("binomial").variance(mu[:2]), mu[:2] * (1 - mu[:2]))


@pytest.mark.parametrize("name,mu,phi", [("gaussian", 1.5, 0.4), ("poisson", 3.0, 1.0),
                                         ("binomial", 0.3, 1.0), ("gamma", 2.0, 0.5)])
def test_simulated_moments(name, mu, phi):
    f = get_family(name)
    n = 200_000
    y = fam.simulate_response(f, np.full(n, mu), phi, np.random.default_rng(9))
    var = phi * f.variance(np.array([mu]))[0]
    assert abs(y.mean() - mu) < 5 * np.sqrt(var / n)
    assert y.var() == pytest.approx(var, rel=0.02)


def test_deviance_residuals_square_to_deviance():
    rng = np.random.default_rng(4)
    f = get_family("poisson")
    mu = rng.uniform(0.5, 5, 100)
    y = rng.poisson(mu).astype(float)
    r = fam.deviance_residuals(f, y, mu)
    assert np.sum(r ** 2) == pytest.approx(fam.deviance(f, y, mu), rel=1e-12)
    assert np.all(np.sign(r) == np.sign(y - mu))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 50), st.sampled_from(["poisson", "gamma"]))
def test_unit_deviance_zero_at_saturation_and_positive_elsewhere(y, name):
    f = get_family(name)
    if name == "poisson":
        y = float(np.round(y))
    yy = np.array([y])
    assert fam.unit_deviance(f, yy, np.array([y if y > 0 else 1e-300]))[0] == pytest.approx(0, abs=1e-10)
    assert fam.unit_deviance(f, yy, np.array([y + 1.0]))[0] > 0


def test_binomial_variance_maximal_at_half():
    grid = np.linspace(0.001, 0.999, 999)
    v = get_family("binomial").variance(grid)
    assert grid[np.argmax(v)] == pytest.approx(0.5, abs=1e-12)


def test_poisson_moment_oracle():
    y = fam.simulate_response(get_family("poisson"), np.full(100_000, 4.0), 1.0,
                              np.random.default_rng(11))
    assert abs(y.mean() - 4) < 0.05 and abs(y.var() - 4) < 0.15


def test_simulation_seeded_and_degenerate():
    f = get_family("gaussian")
    mu = np.linspace(-1, 1, 20)
    a = fam.simulate_response(f, mu, 0.5, np.random.default_rng(3))
    b = fam.simulate_response(f, mu, 0.5, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(fam.simulate_response(f, mu, 1e-12, np.random.default_rng(3)), mu,
                               atol=1e-5)
    np.testing.assert_array_equal(fam.deviance_residuals(f, mu, mu), 0.0)
