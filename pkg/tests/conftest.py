import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def mc_kernel(phi, a, b, n=2_000_000, seed=0):
    """Monte-Carlo oracle for I_phi[a, b]; returns (estimate, standard error)."""
    g = np.random.default_rng(seed)
    z1 = g.standard_normal(n)
    z2 = g.standard_normal(n)
    c = b / a if a > 0 else 0.0
    u = np.sqrt(a) * z1
    v = np.sqrt(a) * (c * z1 + np.sqrt(max(1 - c * c, 0.0)) * z2)
    vals = np.asarray(phi(u) * phi(v), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))
