"""
Dispersion measures on empirical samples and finite distributions.

Gini deviation (half the mean absolute difference of two i.i.d. copies),
variance, and signed Choquet integrals with a distortion ``h`` on [0, 1].
Empirical estimators use the sorted O(n log n) forms; the O(n^2) double
loops live in the tests as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12
MERGE_TOL = 1e-12


def _as_samples(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name}: empty sample")
    return arr


def gd_pairwise(values) -> float:
    """
    Empirical Gini deviation ``(1 / 2n^2) sum_i sum_j |x_i - x_j|``.

    Evaluated as the sum over sorted pairs ``sum_{j<i} (x_(i) - x_(j))`` via
    prefix sums, so ties and unsorted input are fine.
    """
    x = np.sort(_as_samples(values, "gd_pairwise"), kind="stable")
    n = x.size
    prefix = np.concatenate(([0.0], np.cumsum(x)[:-1]))
    below = np.arange(n) * x - prefix
    return max(float(2.0 * below.sum() / (2.0 * n * n)), 0.0)


def variance_pairwise(values) -> float:
    """Empirical variance ``(1 / 2n^2) sum_i sum_j (x_i - x_j)^2`` (population form)."""
    x = _as_samples(values, "variance_pairwise")
    return float(np.mean((x - x.mean()) ** 2))


def quantile_weights(n: int) -> np.ndarray:
    """Integrals of ``2a - 1`` over the quantile cells ``[(i-1)/n, i/n]``."""
    return _weight_numerators(n) / float(n * n)


def _weight_numerators(n: int) -> np.ndarray:
    """``2i - 1 - n``: the cell weights times ``n^2``, exact in floating point."""
    return 2.0 * np.arange(1, n + 1) - 1.0 - n


def gd_quantile(values, assume_sorted: bool = False) -> float:
    """
    Gini deviation from the step quantile function of the sample.

    Each order statistic ``x_(i)`` is the quantile on ``[(i-1)/n, i/n]`` and the
    integral of ``F^{-1}(a) (2a - 1)`` is taken cell by cell.
    """
    x = _as_samples(values, "gd_quantile")
    if not assume_sorted:
        x = np.sort(x, kind="stable")
    elif np.any(np.diff(x) < 0):
        raise ValueError("gd_quantile: sample flagged sorted but is not non-decreasing")
    # one division at the end keeps integer-valued samples exact
    return float(np.dot(x, _weight_numerators(x.size)) / float(x.size * x.size))


@dataclass(frozen=True)
class CategoricalDist:
    """Finite distribution with strictly increasing atoms."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        p = np.asarray(self.probs, dtype=float).ravel()
        if v.size == 0 or v.size != p.size:
            raise ValueError("CategoricalDist: values and probs must be non-empty and aligned")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(v)):
            raise ValueError("CategoricalDist: probabilities must lie in [0, 1], values finite")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"CategoricalDist: probabilities sum to {p.sum()!r}, not 1")
        if np.any(np.diff(v) <= 0):
            raise ValueError("CategoricalDist: atom values must be strictly increasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_atoms(cls, values, probs, tol: float = MERGE_TOL, normalize: bool = False) -> "CategoricalDist":
        """Sort atoms and merge values that coincide within ``tol`` (relative to scale)."""
        v = np.asarray(values, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        order = np.argsort(v, kind="stable")
        v, p = v[order], p[order]
        keep = p > 0
        if keep.any():
            v, p = v[keep], p[keep]
        merged_v, merged_p = merge_sorted_atoms(v, p, tol)
        if normalize:
            merged_p = merged_p / merged_p.sum()
        return cls(merged_v, merged_p)

    @classmethod
    def point_mass(cls, value: float) -> "CategoricalDist":
        return cls(np.array([float(value)]), np.array([1.0]))

    @classmethod
    def uniform(cls, values: Sequence[float]) -> "CategoricalDist":
        v = np.asarray(values, dtype=float)
        return cls.from_atoms(v, np.full(v.size, 1.0 / v.size))

    def scale(self, c: float) -> "CategoricalDist":
        return CategoricalDist.from_atoms(self.values * c, self.probs)

    def shift(self, m: float) -> "CategoricalDist":
        return CategoricalDist.from_atoms(self.values + m, self.probs)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.values, size=size, p=self.probs)


def merge_sorted_atoms(values: np.ndarray, probs: np.ndarray, tol: float = MERGE_TOL):
    """Merge consecutive sorted atoms closer than ``tol * max(1, |v|)``; keeps the first value."""
    if values.size == 0:
        return values, probs
    gaps = np.diff(values)
    scale = np.maximum(1.0, np.abs(values[1:]))
    starts = np.concatenate(([True], gaps > tol * scale))
    group = np.cumsum(starts) - 1
    merged_p = np.bincount(group, weights=probs)
    return values[starts], merged_p


@dataclass(frozen=True)
class Distortion:
    """
    Distortion function ``h`` on [0, 1] with ``h(0) = 0``.

    kind ``gini`` is ``h(a) = a - a^2``, kind ``mean`` the identity; ``custom``
    interpolates linearly between ``knots`` (alphas) and ``knot_values``.
    """

    kind: str = "gini"
    knots: tuple = field(default=())
    knot_values: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("gini", "mean", "custom"):
            raise ValueError(f"Distortion: unknown kind {self.kind!r}")
        if self.kind == "custom":
            a = np.asarray(self.knots, dtype=float)
            h = np.asarray(self.knot_values, dtype=float)
            if a.size < 2 or a.size != h.size:
                raise ValueError("Distortion: custom kind needs at least two aligned knots")
            if a[0] != 0.0 or a[-1] != 1.0 or np.any(np.diff(a) <= 0):
                raise ValueError("Distortion: knots must increase from 0 to 1")
            if not np.all(np.isfinite(h)):
                raise ValueError("Distortion: knot values must be finite")
            if h[0] != 0.0:
                raise ValueError("Distortion: h(0) must be 0")

    def __call__(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if self.kind == "gini":
            return a - a * a
        if self.kind == "mean":
            return a
        return np.interp(a, np.asarray(self.knots, float), np.asarray(self.knot_values, float))


GINI = Distortion("gini")
MEAN = Distortion("mean")


def signed_choquet(d: CategoricalDist, h: Distortion) -> float:
    """
    ``int_0^1 F^{-1}(1 - a) dh(a)`` over the atoms of ``d``.

    On the cell where the upper tail mass runs from ``P(X > v_j)`` to
    ``P(X >= v_j)`` the reversed quantile equals ``v_j``, so the integral is
    ``sum_j v_j [h(P(X >= v_j)) - h(P(X > v_j))]``.
    """
    if float(h(0.0)) != 0.0:
        raise ValueError("signed_choquet: invalid distortion, h(0) != 0")
    upper_incl = np.cumsum(d.probs[::-1])[::-1]
    upper_excl = np.concatenate((upper_incl[1:], [0.0]))
    upper_incl = np.clip(upper_incl, 0.0, 1.0)
    return float(np.dot(d.values, h(upper_incl) - h(upper_excl)))


def exact_mean(d: CategoricalDist) -> float:
    return float(np.dot(d.values, d.probs))


def exact_variance(d: CategoricalDist) -> float:
    mu = exact_mean(d)
    return float(np.dot(d.probs, (d.values - mu) ** 2))


def exact_gd(d: CategoricalDist) -> float:
    """``(1/2) sum_i sum_j p_i p_j |v_i - v_j|`` through cumulative sums over sorted atoms."""
    v, p = d.values, d.probs
    mass_below = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    moment_below = np.concatenate(([0.0], np.cumsum(p * v)[:-1]))
    return max(float(np.dot(p, v * mass_below - moment_below)), 0.0)
