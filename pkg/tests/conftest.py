import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def empirical(samples, m):
    return np.bincount(np.asarray(samples).reshape(-1), minlength=m) / np.asarray(samples).size


def within_sigma(freq, p, n, k=5.0):
    """Binomial ``k``-sigma agreement of empirical frequencies with ``p``."""
    sd = np.sqrt(np.maximum(p * (1 - p), 1e-300) / n)
    return np.all(np.abs(freq - p) <= k * sd + 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
