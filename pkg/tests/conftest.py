import numpy as np
import pandas as pd
import pytest

from gamforge.engine import fit


def gu_wahba(x):
    return 0.2 * x ** 11 * (10 * (1 - x)) ** 6 + 10 * (10 * x) ** 3 * (1 - x) ** 10


def gu_wahba_data(seed, n=200, sigma=1.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    return pd.DataFrame({"x": x, "y": gu_wahba(x) + rng.normal(0.0, sigma, n)})


def surface_data(seed, n=300):
    """Two smooth covariates plus a linear one, gaussian noise."""
    rng = np.random.default_rng(seed)
    lat = rng.uniform(40, 50, n)
    lon = rng.uniform(-50, -40, n)
    z = rng.uniform(0, 1, n)
    f = np.sin(lat / 2.0) + 0.5 * np.cos(lon / 3.0)
    return pd.DataFrame({"lat": lat, "lon": lon, "z": z, "y": f + 0.8 * z + rng.normal(0, 0.3, n)})


def count_data(seed, n=250):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    mu = np.exp(1.0 + np.sin(2 * np.pi * x))
    return pd.DataFrame({"x": x, "y": rng.poisson(mu).astype(float)})


@pytest.fixture(scope="session")
def gw_model():
    return fit("y ~ s(x, k=10)", gu_wahba_data(1))


@pytest.fixture(scope="session")
def surface_model():
    return fit("y ~ s(lat, lon) + z", surface_data(2))


@pytest.fixture(scope="session")
def poisson_model():
    return fit('y ~ s(x, bs="cr", k=12)', count_data(3), family="poisson")
