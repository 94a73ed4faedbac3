import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def coherent_wavefunction(alpha, x):
    """<x|alpha> for X = (b + b^dag)/sqrt(2); independent of the package."""
    q = np.sqrt(2.0) * alpha.real
    p = np.sqrt(2.0) * alpha.imag
    return np.pi ** -0.25 * np.exp(-0.5 * (x - q) ** 2 + 1j * p * x - 0.5j * q * p)
