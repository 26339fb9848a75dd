"""Split, adaptive and weighted conformal prediction over shot multisets.

The adaptive loop keeps a growing ledger of calibration scores.  At each
test point the threshold is the ``1 - alpha_t`` quantile of the ledger
augmented with a point mass at ``+inf``; after the label is revealed
``alpha_t`` moves by ``gamma * (alpha - err)`` and the new score joins the
ledger.  With ``gamma = 0`` this is split conformal prediction with an
updating calibration set.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .scores import ScoreSpec, raw_scores

__all__ = [
    "CandidateGrid",
    "PredictionSet",
    "AqcpState",
    "StepRecord",
    "get_quantile",
    "weighted_quantile",
    "normalise_weights",
    "generate_prediction_set",
    "aqcp_step",
    "run_aqcp",
    "run_aqcp_scores",
    "score_table",
    "candidate_scores",
    "coverage_bound",
    "weighted_prediction_set",
    "split_conformal_threshold",
]

_LEVEL_EPS = 1e-12


@dataclass(frozen=True)
class CandidateGrid:
    """Uniform candidate targets ``lo, lo + spacing, ..., hi``."""

    lo: float = -1.5
    hi: float = 1.5
    num_points: int = 301

    def __post_init__(self):
        if self.num_points < 2 or self.hi <= self.lo:
            raise ValueError("candidate grid needs hi > lo and at least 2 points")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.num_points)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.num_points - 1)

    def nearest(self, y: float) -> int:
        i = int(round((y - self.lo) / self.spacing))
        return min(max(i, 0), self.num_points - 1)


@dataclass(frozen=True)
class PredictionSet:
    grid: CandidateGrid
    mask: np.ndarray

    @property
    def size(self) -> float:
        """Lebesgue-style size: number of admitted grid points times the spacing."""
        return float(np.count_nonzero(self.mask)) * self.grid.spacing

    @property
    def members(self) -> np.ndarray:
        return self.grid.points[self.mask]

    def contains(self, y: float) -> bool:
        return bool(self.mask[self.grid.nearest(y)])

    def intervals(self) -> list[tuple[float, float]]:
        pts = self.grid.points
        out, start = [], None
        for i, m in enumerate(self.mask):
            if m and start is None:
                start = i
            if not m and start is not None:
                out.append((pts[start], pts[i - 1]))
                start = None
        if start is not None:
            out.append((pts[start], pts[-1]))
        return out


def get_quantile(scores: Sequence[float], alpha: float, include_infinity: bool = False, presorted: bool = False) -> float:
    """``inf{q : #{s <= q} / n >= 1 - alpha}`` over the score multiset.

    With ``include_infinity`` the multiset gets an extra ``+inf`` point, which
    gives the ``ceil((n+1)(1-alpha))``-th smallest score.  Levels above one
    return ``+inf`` and levels at or below zero return ``-inf``.
    """
    n = len(scores)
    if n == 0:
        raise ValueError("quantile of an empty score multiset")
    level = 1.0 - alpha
    if level <= 0:
        return -math.inf
    if level > 1:
        return math.inf
    total = n + 1 if include_infinity else n
    k = math.ceil(level * total - total * _LEVEL_EPS)
    k = max(k, 1)
    if k > n:
        return math.inf
    if presorted:
        return float(scores[k - 1])
    return float(np.partition(np.asarray(scores, dtype=float), k - 1)[k - 1])


def normalise_weights(weights: Sequence[float]) -> tuple[np.ndarray, float]:
    """Calibration weights ``w_i / (sum w + 1)`` and the test-point weight ``1 / (sum w + 1)``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
        raise ValueError("weights must lie in [0, 1]")
    denom = w.sum() + 1.0
    return w / denom, 1.0 / denom


def weighted_quantile(scores: Sequence[float], weights: Sequence[float], alpha: float) -> float:
    """``1 - alpha`` quantile of ``sum w~_i delta_{s_i} + w~_{n+1} delta_{+inf}``."""
    s = np.asarray(scores, dtype=float)
    if s.shape != np.shape(weights):
        raise ValueError(f"{len(weights)} weights for {s.size} scores")
    level = 1.0 - alpha
    if level <= 0:
        return -math.inf
    if level > 1:
        return math.inf
    w_cal, _ = normalise_weights(weights)
    order = np.argsort(s, kind="stable")
    cum = np.cumsum(w_cal[order])
    i = int(np.searchsorted(cum, level - _LEVEL_EPS, side="left"))
    if i >= s.size:
        return math.inf
    return float(s[order][i])


def split_conformal_threshold(cal_scores: Sequence[float], alpha: float) -> float:
    return get_quantile(cal_scores, alpha, include_infinity=True)


def coverage_bound(alpha1: float, gamma: float, n: int) -> float:
    """Deterministic bound on ``|mean(err) - alpha|`` after ``n`` adaptive steps."""
    if gamma <= 0:
        raise ValueError("the bound needs gamma > 0")
    if n < 1:
        raise ValueError("the bound needs at least one step")
    return (max(alpha1, 1 - alpha1) + gamma) / (n * gamma)


def candidate_scores(spec, shots, grid, rng, extra=None):
    samples = getattr(shots, "values", shots)
    ys = grid.points if extra is None else np.concatenate([[extra], grid.points])
    raw = raw_scores(spec, ys, samples)
    return raw + rng.normal(0.0, spec.tiebreak_sigma, size=raw.shape)


def generate_prediction_set(x, lam: float, shots, spec: ScoreSpec, grid: CandidateGrid, rng: np.random.Generator) -> PredictionSet:
    """Admit every candidate whose tie-broken score is at most ``lam``."""
    scores = candidate_scores(spec, shots, grid, rng)
    return PredictionSet(grid, scores <= lam)


def weighted_prediction_set(cal_scores, weights, x, shots, spec: ScoreSpec, alpha: float, grid: CandidateGrid, rng: np.random.Generator) -> PredictionSet:
    lam = weighted_quantile(cal_scores, weights, alpha)
    return generate_prediction_set(x, lam, shots, spec, grid, rng)


# ---------------------------------------------------------------------------
# Adaptive loop


@dataclass
class AqcpState:
    alpha_target: float
    gamma: float
    scores: list = field(default_factory=list)
    alpha_t: float | None = None
    err_history: list = field(default_factory=list)
    t_index: int = 0
    n_initial: int = 0
    max_ledger: int | None = None
    _arrival: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha_target <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.alpha_t is None:
            self.alpha_t = self.alpha_target
        if not self._arrival:
            self._arrival = deque(self.scores)
        self.scores = sorted(self.scores)
        self.n_initial = self.n_initial or len(self.scores)

    @classmethod
    def calibrate(cls, cal_scores, alpha: float, gamma: float, max_ledger: int | None = None) -> "AqcpState":
        state = cls(alpha, gamma, list(map(float, cal_scores)), max_ledger=max_ledger)
        state._trim()
        return state

    def threshold(self) -> float:
        return get_quantile(self.scores, self.alpha_t, include_infinity=True, presorted=True)

    def _trim(self):
        while self.max_ledger is not None and len(self.scores) > self.max_ledger:
            old = self._arrival.popleft()
            del self.scores[bisect.bisect_left(self.scores, old)]

    def update(self, true_score: float, lam: float) -> int:
        err = int(true_score > lam)
        self.alpha_t = self.alpha_t + self.gamma * (self.alpha_target - err)
        bisect.insort(self.scores, true_score)
        self._arrival.append(true_score)
        self._trim()
        self.err_history.append(err)
        self.t_index += 1
        return err

    def copy(self) -> "AqcpState":
        return replace(self, scores=list(self.scores), err_history=list(self.err_history), _arrival=deque(self._arrival))


@dataclass(frozen=True)
class StepRecord:
    step: int
    alpha_t: float
    err: int
    covered: bool
    set_size: float
    lam: float


def aqcp_step(state: AqcpState, x, y_true, shots, spec: ScoreSpec, grid: CandidateGrid, rng: np.random.Generator):
    """One adaptive step.  Returns the prediction set, the updated state and a record.

    The true-label score draws its tie-break noise first, then the candidates.
    """
    new = state.copy()
    lam = new.threshold()
    scores = candidate_scores(spec, shots, grid, rng, extra=y_true)
    pset = PredictionSet(grid, scores[1:] <= lam)
    alpha_used = new.alpha_t
    err = new.update(float(scores[0]), lam)
    rec = StepRecord(new.t_index, alpha_used, err, pset.contains(y_true), pset.size, lam)
    return pset, new, rec


def score_table(spec: ScoreSpec, cal, test, cal_shots, test_shots, grid: CandidateGrid | None, seed: int):
    """Tie-broken scores for a whole run, in the same noise order as ``aqcp_step``.

    Returns ``(cal_scores, true_scores, candidate_scores)``; candidates are
    ``None`` when ``grid`` is None.
    """
    rng = np.random.default_rng(seed)
    cal_scores = np.array([
        raw_scores(spec, [y], getattr(s, "values", s))[0] + rng.normal(0.0, spec.tiebreak_sigma)
        for (_, y), s in zip(cal, cal_shots)
    ])
    true = np.empty(len(test))
    cand = None if grid is None else np.empty((len(test), grid.num_points))
    for i, ((_, y), s) in enumerate(zip(test, test_shots)):
        if grid is None:
            true[i] = raw_scores(spec, [y], getattr(s, "values", s))[0] + rng.normal(0.0, spec.tiebreak_sigma)
        else:
            sc = candidate_scores(spec, s, grid, rng, extra=y)
            true[i] = sc[0]
            cand[i] = sc[1:]
    return cal_scores, true, cand


@dataclass
class AqcpRun:
    alpha_t: np.ndarray
    err: np.ndarray
    lam: np.ndarray
    set_size: np.ndarray
    covered: np.ndarray
    state: AqcpState

    def __len__(self) -> int:
        return len(self.err)

    @property
    def mean_error(self) -> float:
        return float(self.err.mean()) if len(self.err) else float("nan")

    def records(self) -> list[StepRecord]:
        return [
            StepRecord(i + 1, float(a), int(e), bool(c), float(s), float(l))
            for i, (a, e, c, s, l) in enumerate(zip(self.alpha_t, self.err, self.covered, self.set_size, self.lam))
        ]


def run_aqcp_scores(cal_scores, true_scores, alpha: float, gamma: float, candidate_scores=None, grid: CandidateGrid | None = None, test_labels=None, max_ledger: int | None = None) -> AqcpRun:
    """Adaptive loop over precomputed scores.

    ``candidate_scores`` (n_test x grid points) are only needed for set sizes
    and membership; the miscoverage sequence depends on the true scores alone.
    """
    state = AqcpState.calibrate(cal_scores, alpha, gamma, max_ledger=max_ledger)
    n = len(true_scores)
    alphas = np.empty(n)
    lams = np.empty(n)
    errs = np.empty(n, dtype=int)
    sizes = np.full(n, np.nan)
    covered = np.zeros(n, dtype=bool)
    for i in range(n):
        alphas[i] = state.alpha_t
        lam = state.threshold()
        lams[i] = lam
        if candidate_scores is not None:
            mask = candidate_scores[i] <= lam
            sizes[i] = np.count_nonzero(mask) * grid.spacing
            if test_labels is not None:
                covered[i] = bool(mask[grid.nearest(test_labels[i])])
        errs[i] = state.update(float(true_scores[i]), lam)
    if test_labels is None or candidate_scores is None:
        covered = errs == 0
    return AqcpRun(alphas, errs, lams, sizes, covered, state)


def run_aqcp(calibration, test_stream, spec: ScoreSpec, gamma: float, alpha: float, shot_source: Callable, grid: CandidateGrid | None = None, seed: int = 0, max_ledger: int | None = None) -> AqcpRun:
    """Full loop: score the calibration set, then predict/update along the stream.

    ``shot_source(index, x)`` returns the shots for sample ``index``; the
    calibration points use indices ``0..n-1`` and the test stream continues
    from ``n``.
    """
    if len(calibration) == 0:
        raise ValueError("calibration set is empty")
    grid = grid or CandidateGrid()
    n = len(calibration)
    cal_shots = [shot_source(i, x) for i, (x, _) in enumerate(calibration)]
    test_shots = [shot_source(n + i, x) for i, (x, _) in enumerate(test_stream)]
    cal_s, true_s, cand = score_table(spec, calibration, test_stream, cal_shots, test_shots, grid, seed)
    labels = [y for _, y in test_stream]
    return run_aqcp_scores(cal_s, true_s, alpha, gamma, cand, grid, labels, max_ledger)
