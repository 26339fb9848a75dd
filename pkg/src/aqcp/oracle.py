"""Analytic ground truth for the bimodal regression task.

The conditional law ``Y | X=x`` is known exactly, so the smallest set with
conditional mass ``1 - alpha`` is the superlevel set ``{y : p(y|x) >= t}``
for the right ``t``.  Boundaries come from root-finding on the density and
masses from trapezoid integration between them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from .conformal import CandidateGrid, PredictionSet
from .datagen import NOISE_SIGMA, mu

__all__ = [
    "NumericError",
    "true_density",
    "OptimalSet",
    "optimal_set",
    "superlevel_intervals",
    "GaussianModel",
    "MixtureModel",
    "UniformModel",
    "check_s1_equivalence",
    "check_s2_gaussian_form",
    "hdr_mass",
    "brute_force_knn_density",
]

INTEGRATION_RANGE = (-2.0, 2.0)
INTEGRATION_POINTS = 4096
MASS_TOL = 1e-10
MAX_BISECTIONS = 200


class NumericError(RuntimeError):
    pass


def true_density(x, y, sigma: float = NOISE_SIGMA):
    m = float(mu(x))
    y = np.asarray(y, dtype=float)
    c = 0.5 / (sigma * np.sqrt(2 * np.pi))
    return c * (np.exp(-0.5 * ((y + m) / sigma) ** 2) + np.exp(-0.5 * ((y - m) / sigma) ** 2))


def superlevel_intervals(pdf, t: float, lo: float, hi: float, points: int = INTEGRATION_POINTS, extra_points=()):
    """Intervals of ``{y in [lo, hi] : pdf(y) >= t}`` with refined endpoints.

    ``extra_points`` are added to the detection grid; pass known critical
    points of ``pdf`` so narrow dips between modes are never stepped over.
    """
    ys = np.union1d(np.linspace(lo, hi, points), [p for p in extra_points if lo <= p <= hi])
    points = ys.size
    above = np.concatenate([[False], pdf(ys) >= t, [False]])
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    f = lambda v: pdf(v) - t
    out = []
    for i, j in zip(edges[::2], edges[1::2] - 1):
        a = ys[i] if i == 0 else optimize.brentq(f, ys[i - 1], ys[i], xtol=1e-14)
        b = ys[j] if j == points - 1 else optimize.brentq(f, ys[j], ys[j + 1], xtol=1e-14)
        out.append((float(a), float(b)))
    return out


def _interval_mass(pdf, intervals, points: int = INTEGRATION_POINTS) -> float:
    total = 0.0
    for a, b in intervals:
        ys = np.linspace(a, b, points)
        total += integrate.trapezoid(pdf(ys), ys)
    return float(total)


@dataclass(frozen=True)
class OptimalSet:
    x: float
    alpha: float
    threshold: float
    intervals: tuple[tuple[float, float], ...]
    mass: float
    prediction_set: PredictionSet

    @property
    def length(self) -> float:
        """Exact Lebesgue measure of the union of intervals."""
        return float(sum(b - a for a, b in self.intervals))

    @property
    def size(self) -> float:
        """Size on the candidate grid (count times spacing)."""
        return self.prediction_set.size


def optimal_set(x: float, alpha: float, grid: CandidateGrid | None = None) -> OptimalSet:
    """Highest-density set of conditional mass ``1 - alpha`` at input ``x``."""
    grid = grid or CandidateGrid()
    pdf = lambda y: true_density(x, y)
    lo, hi = INTEGRATION_RANGE
    if alpha >= 1.0:
        return OptimalSet(x, alpha, np.inf, (), 0.0, PredictionSet(grid, np.zeros(grid.num_points, dtype=bool)))
    if alpha <= 0.0:
        raise ValueError("alpha must be positive; the full-mass set is unbounded")
    target = 1.0 - alpha
    t_lo, t_hi = 0.0, float(np.max(pdf(np.linspace(lo, hi, INTEGRATION_POINTS)))) * 1.01
    intervals, mass = None, None
    for _ in range(MAX_BISECTIONS):
        t = 0.5 * (t_lo + t_hi)
        # the mixture is symmetric about 0, so y = 0 is always a critical point
        intervals = superlevel_intervals(pdf, t, lo, hi, extra_points=(0.0,))
        mass = _interval_mass(pdf, intervals)
        if abs(mass - target) <= MASS_TOL:
            break
        if mass > target:
            t_lo = t
        else:
            t_hi = t
    else:
        raise NumericError(f"threshold bisection did not converge at x={x}, alpha={alpha}")
    mask = pdf(grid.points) >= t
    return OptimalSet(float(x), float(alpha), t, tuple(intervals), mass, PredictionSet(grid, mask))


# ---------------------------------------------------------------------------
# Score-optimality checks


@dataclass(frozen=True)
class GaussianModel:
    mean: float
    sigma: float

    def pdf(self, y):
        return stats.norm.pdf(y, self.mean, self.sigma)


@dataclass(frozen=True)
class MixtureModel:
    """Equal mixture of ``N(-m, s^2)`` and ``N(m, s^2)``, the task law at one ``x``."""

    m: float
    sigma: float = NOISE_SIGMA

    @property
    def mean(self) -> float:
        return 0.0

    def pdf(self, y):
        return 0.5 * (stats.norm.pdf(y, -self.m, self.sigma) + stats.norm.pdf(y, self.m, self.sigma))


@dataclass(frozen=True)
class UniformModel:
    lo: float
    hi: float

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape, 1.0 / (self.hi - self.lo))


def check_s1_equivalence(x, model, grid: CandidateGrid | None = None, rtol: float = 1e-9) -> bool:
    """Does ranking by distance to the model mean reproduce ranking by density?

    True when, walking the grid in order of increasing ``|y - mean|``, the
    density never increases (ties within ``rtol`` are tolerated).
    """
    grid = grid or CandidateGrid()
    ys = grid.points
    dist = np.abs(ys - model.mean)
    dens = np.asarray(model.pdf(ys), dtype=float)
    order = np.argsort(dist, kind="stable")
    steps = np.diff(dens[order])
    tol = rtol * max(float(np.max(dens)), 1e-300)
    return bool(np.all(steps <= tol))


def hdr_mass(pdf, y: float, mode: float, lo: float, hi: float) -> float:
    """Mass of ``{y' : pdf(y') > pdf(y)}`` for a unimodal density with the given mode.

    Boundaries are found by root-finding on each flank and the mass by
    adaptive quadrature, independent of any closed form.
    """
    level = pdf(y)
    if level >= pdf(mode):
        return 0.0
    f = lambda v: pdf(v) - level
    left = lo if f(lo) > 0 else optimize.brentq(f, lo, mode, xtol=1e-14)
    right = hi if f(hi) > 0 else optimize.brentq(f, mode, hi, xtol=1e-14)
    val, _ = integrate.quad(pdf, left, right, points=[mode], epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def check_s2_gaussian_form(x, mean: float, sigma: float, y: float) -> float:
    """Residual between ``2 Phi(|y - mean| / sigma) - 1`` and the integrated superlevel mass."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    closed = 2.0 * stats.norm.cdf(abs(y - mean) / sigma) - 1.0
    pdf = lambda v: stats.norm.pdf(v, mean, sigma)
    numeric = hdr_mass(pdf, y, mean, mean - 40 * sigma, mean + 40 * sigma)
    return abs(closed - numeric)


def brute_force_knn_density(samples, y: float, k: int) -> float:
    """k-NN density estimate ``k / (2 M d_k)``; ``+inf`` when ``d_k = 0``."""
    s = np.asarray(samples, dtype=float).ravel()
    if not 1 <= k <= s.size:
        raise ValueError(f"k={k} outside 1..{s.size}")
    d = np.sort(np.abs(s - y))[k - 1]
    if d == 0:
        return float("inf")
    return k / (2.0 * s.size * d)
