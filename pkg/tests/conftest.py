from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_gd(x) -> float:
    """O(n^2) reference: (1/2n^2) sum_ij |x_i - x_j|."""
    x = np.asarray(x, dtype=float)
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2 * x.size ** 2))


def brute_exact_gd(values, probs) -> float:
    v, p = np.asarray(values, float), np.asarray(probs, float)
    return float(0.5 * (p[:, None] * p[None, :] * np.abs(v[:, None] - v[None, :])).sum())
