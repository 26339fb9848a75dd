"""Sample-based conformity scores.

All four scores compare a candidate target ``y`` with the multiset of
decoded shots for an input:

* ``euc`` -- distance from ``y`` to the sample mean;
* ``knn`` -- distance from ``y`` to its k-th nearest sample, ``k = ceil(sqrt(M))``;
* ``kde`` -- negative Gaussian kernel density estimate at ``y``;
* ``hdr`` -- estimated mass of the region where the KDE exceeds its value at ``y``.

Shots live on a lattice, so scores are computed from the distinct values and
their multiplicities.  A small Gaussian perturbation breaks score ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SCORE_VARIANTS",
    "ScoreSpec",
    "silverman_bandwidth",
    "kde_density",
    "raw_scores",
    "score",
    "MIN_BANDWIDTH",
]

SCORE_VARIANTS = ("euc", "knn", "kde", "hdr")
MIN_BANDWIDTH = 1e-4
_SQRT_2PI = math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class ScoreSpec:
    variant: str = "hdr"
    k: int | None = None
    tiebreak_sigma: float = 1e-4
    bandwidth: float | None = None
    hdr_points: int = 512
    hdr_range: tuple[float, float] = (-1.5, 1.5)

    def __post_init__(self):
        if self.variant not in SCORE_VARIANTS:
            raise ValueError(f"unknown score variant {self.variant!r}; choose from {SCORE_VARIANTS}")
        if self.tiebreak_sigma <= 0:
            raise ValueError("tiebreak_sigma must be positive")
        if self.hdr_points < 64:
            raise ValueError("hdr_points must be at least 64")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")

    def k_for(self, num_samples: int) -> int:
        k = self.k if self.k is not None else math.ceil(math.sqrt(num_samples))
        return min(k, num_samples)


def silverman_bandwidth(samples) -> float:
    """``0.9 * min(std, IQR/1.34) * M^(-1/5)``, floored at ``MIN_BANDWIDTH``.

    When the IQR is zero but the spread is not (most shots on one lattice
    point), the standard deviation alone is used.
    """
    s = np.asarray(samples, dtype=float).ravel()
    m = s.size
    if m == 0:
        raise ValueError("bandwidth of an empty sample")
    if m < 2:
        return MIN_BANDWIDTH
    sd = float(np.std(s, ddof=1))
    q75, q25 = np.percentile(s, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return max(0.9 * spread * m ** (-0.2), MIN_BANDWIDTH)


def _unique(samples):
    values, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
    return values, counts.astype(float)


def kde_density(points, samples, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian KDE of ``samples`` evaluated at ``points``."""
    samples = np.asarray(samples, dtype=float).ravel()
    h = silverman_bandwidth(samples) if bandwidth is None else float(bandwidth)
    values, counts = _unique(samples)
    z = (np.asarray(points, dtype=float)[..., None] - values) / h
    return (np.exp(-0.5 * z * z) @ counts) / (samples.size * h * _SQRT_2PI)


def _knn_distance(ys, values, counts, k):
    d = np.abs(ys[:, None] - values[None, :])
    order = np.argsort(d, axis=1, kind="stable")
    d_sorted = np.take_along_axis(d, order, axis=1)
    cum = np.cumsum(counts[order], axis=1)
    pos = np.argmax(cum >= k, axis=1)
    return d_sorted[np.arange(len(ys)), pos]


def _hdr_mass(ys, samples, h, spec: ScoreSpec):
    lo = min(spec.hdr_range[0], float(np.min(samples))) - 3 * h
    hi = max(spec.hdr_range[1], float(np.max(samples))) + 3 * h
    grid = np.linspace(lo, hi, spec.hdr_points)
    step = grid[1] - grid[0]
    dens_grid = np.sort(kde_density(grid, samples, h))
    # mass above each grid density level: tail sums of the ascending sort,
    # normalised by the grid total so an unresolved (tiny-h) kernel still
    # yields a fraction in [0, 1]
    tail = np.concatenate([np.cumsum(dens_grid[::-1])[::-1], [0.0]]) * step
    if tail[0] > 0:
        tail = tail / tail[0]
    dens_y = kde_density(ys, samples, h)
    # strict superlevel set; grid points equal to dens_y up to rounding are excluded
    first_above = np.searchsorted(dens_grid, dens_y * (1 + 1e-9), side="right")
    return tail[first_above]


def raw_scores(spec: ScoreSpec, ys, samples) -> np.ndarray:
    """Scores of candidates ``ys`` against ``samples`` before tie-breaking."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("cannot score against an empty shot multiset")
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if spec.variant == "euc":
        return np.abs(ys - samples.mean())
    if spec.variant == "knn":
        values, counts = _unique(samples)
        return _knn_distance(ys, values, counts, spec.k_for(samples.size))
    h = silverman_bandwidth(samples) if spec.bandwidth is None else spec.bandwidth
    if spec.variant == "kde":
        return -kde_density(ys, samples, h)
    return _hdr_mass(ys, samples, h, spec)


def score(spec: ScoreSpec, x: float, y: float, shots, rng: np.random.Generator) -> float:
    """Tie-broken score of a single pair.  ``shots`` is a ShotMultiset or array of values."""
    samples = getattr(shots, "values", shots)
    return float(raw_scores(spec, [y], samples)[0] + rng.normal(0.0, spec.tiebreak_sigma))
