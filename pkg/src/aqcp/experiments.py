"""Experiment cells built from the library pieces.

A *cell* is one adaptive run for a fixed (gamma, score) pair over one
calibration set and one test stream.  Shots are shared across cells with the
same seed, and the score tie-break stream depends on the seed and the score
variant only, so cells that differ in ``gamma`` see identical scores.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .conformal import AqcpState, CandidateGrid, candidate_scores, coverage_bound
from .datagen import generate
from .model import TrainedModel
from .noise import NoiseSchedule
from .oracle import optimal_set
from .scores import SCORE_VARIANTS, ScoreSpec, raw_scores
from .shots import ShotClock, sample_shot_sets

__all__ = [
    "moving_coverage",
    "rms_deviation",
    "score_stream_seed",
    "simulate_stream",
    "CellResult",
    "run_cell",
    "oracle_average_size",
    "efficiency_sweep",
    "drift_contrast",
]


def moving_coverage(covered, window: int) -> np.ndarray:
    """Trailing mean of ``covered`` over ``window`` steps; NaN until the window is full."""
    c = np.asarray(covered, dtype=float)
    out = np.full(c.shape, np.nan)
    if window < 1:
        raise ValueError("window must be positive")
    if c.size >= window:
        csum = np.concatenate([[0.0], np.cumsum(c)])
        out[window - 1 :] = (csum[window:] - csum[:-window]) / window
    return out


def rms_deviation(ma, target: float) -> float:
    ma = np.asarray(ma, dtype=float)
    ma = ma[np.isfinite(ma)]
    if ma.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean((ma - target) ** 2)))


def score_stream_seed(seed: int, variant: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), SCORE_VARIANTS.index(variant)])


def simulate_stream(
    model: TrainedModel,
    calibration,
    test,
    num_shots: int,
    schedule: NoiseSchedule,
    clock: ShotClock | None = None,
    seed: int = 0,
    param_resolution: float = 1e-4,
):
    """Shots for the calibration points (indices ``0..n-1``) then the test stream."""
    cal = np.asarray(calibration, dtype=float).reshape(-1, 2)
    tst = np.asarray(test, dtype=float).reshape(-1, 2)
    xs = np.concatenate([cal[:, 0], tst[:, 0]])
    sets = sample_shot_sets(
        xs, num_shots, model.encoder, model.config, schedule, clock, seed,
        grid=model.grid, param_resolution=param_resolution,
    )
    return sets[: len(cal)], sets[len(cal) :]


@dataclass
class CellResult:
    variant: str
    gamma: float
    alpha: float
    alpha_t: np.ndarray
    err: np.ndarray
    covered: np.ndarray
    set_size: np.ndarray
    lam: np.ndarray
    wall_time_ms: np.ndarray | None
    ledger_size: int
    n_cal: int

    def __len__(self) -> int:
        return len(self.err)

    @property
    def avg_coverage(self) -> float:
        return 1.0 - float(np.mean(self.err)) if len(self) else float("nan")

    @property
    def avg_membership(self) -> float:
        return float(np.mean(self.covered)) if len(self) else float("nan")

    @property
    def avg_set_size(self) -> float:
        return float(np.nanmean(self.set_size)) if len(self) and np.isfinite(self.set_size).any() else float("nan")

    @property
    def set_size_se(self) -> float:
        """Monte-Carlo standard error of ``avg_set_size``."""
        sizes = self.set_size[np.isfinite(self.set_size)]
        if sizes.size < 2:
            return float("nan")
        return float(np.std(sizes, ddof=1) / np.sqrt(sizes.size))

    @property
    def bound(self) -> float:
        if self.gamma <= 0 or not len(self):
            return float("inf")
        return coverage_bound(self.alpha, self.gamma, len(self))

    def invariant_failures(self) -> list[str]:
        """Names of the per-run invariants that do not hold."""
        bad = []
        if len(self) and abs(float(np.mean(self.err)) - self.alpha) > self.bound:
            bad.append("coverage bound")
        g = self.gamma
        if np.any(self.alpha_t < -g - 1e-12) or np.any(self.alpha_t > 1 + g + 1e-12):
            bad.append("alpha_t range")
        if self.ledger_size != self.n_cal + len(self) and self.ledger_size > 0:
            bad.append("ledger size")
        return bad

    def coverage_ma(self, window: int) -> np.ndarray:
        return moving_coverage(self.covered, window)


def _values(shots):
    return getattr(shots, "values", shots)


def run_cell(
    calibration,
    test,
    cal_shots,
    test_shots,
    spec: ScoreSpec,
    gamma: float,
    alpha: float,
    grid: CandidateGrid | None = None,
    seed=0,
    with_sets: bool = True,
    record_timing: bool = False,
    max_ledger: int | None = None,
) -> CellResult:
    """Adaptive loop with per-step timing.

    The tie-break stream is consumed identically whether or not sets are
    built, so ``with_sets=False`` gives the same error sequence faster.
    ``covered`` is grid membership of the label's nearest candidate when sets
    are built, and ``err == 0`` otherwise.
    """
    grid = grid or CandidateGrid()
    rng = np.random.default_rng(seed)
    cal_scores = [
        float(raw_scores(spec, [y], _values(s))[0] + rng.normal(0.0, spec.tiebreak_sigma))
        for (_, y), s in zip(calibration, cal_shots)
    ]
    state = AqcpState.calibrate(cal_scores, alpha, gamma, max_ledger=max_ledger or None)
    n = len(test)
    alphas, lams = np.empty(n), np.empty(n)
    errs = np.empty(n, dtype=int)
    sizes = np.full(n, np.nan)
    covered = np.zeros(n, dtype=bool)
    wall = np.empty(n) if record_timing else None
    for i, ((_, y), s) in enumerate(zip(test, test_shots)):
        t0 = time.perf_counter()
        alphas[i] = state.alpha_t
        lam = state.threshold()
        lams[i] = lam
        if with_sets:
            sc = candidate_scores(spec, s, grid, rng, extra=y)
            mask = sc[1:] <= lam
            sizes[i] = np.count_nonzero(mask) * grid.spacing
            covered[i] = bool(mask[grid.nearest(y)])
            true = sc[0]
        else:
            noise = rng.normal(0.0, spec.tiebreak_sigma, size=grid.num_points + 1)
            true = raw_scores(spec, [y], _values(s))[0] + noise[0]
        errs[i] = state.update(float(true), lam)
        if not with_sets:
            covered[i] = errs[i] == 0
        if wall is not None:
            wall[i] = (time.perf_counter() - t0) * 1e3
    ledger = len(state.scores) if max_ledger is None or max_ledger == 0 else 0
    return CellResult(spec.variant, gamma, alpha, alphas, errs, covered, sizes, lams, wall, ledger, len(cal_scores))


def oracle_average_size(xs, alpha: float, grid: CandidateGrid | None = None) -> float:
    """Mean size of the optimal sets over ``xs``, measured on the candidate grid."""
    grid = grid or CandidateGrid()
    return float(np.mean([optimal_set(float(x), alpha, grid).size for x in xs]))


def efficiency_sweep(model: TrainedModel, cfg, seed: int | None = None, progress=None) -> list[dict]:
    """Average coverage and set size per (M, score), plus the oracle column."""
    seed = cfg.seed if seed is None else seed
    data = generate(seed, 0, cfg.n_cal, cfg.efficiency_n_test)
    grid = cfg.candidate_grid()
    oracle = oracle_average_size(data.test[:, 0], cfg.alpha, grid)
    n_samples = len(data.calibration) + len(data.test)
    rows = []
    for m in cfg.efficiency_shots:
        schedule = cfg.schedule(n_samples, m)
        cal_shots, test_shots = simulate_stream(
            model, data.calibration, data.test, m, schedule, cfg.clock(), seed, cfg.param_resolution
        )
        for variant in cfg.scores:
            spec = ScoreSpec(variant)
            cell = run_cell(
                data.calibration, data.test, cal_shots, test_shots, spec, cfg.efficiency_gamma,
                cfg.alpha, grid, score_stream_seed(seed, variant), with_sets=True,
            )
            rows.append({
                "M": m,
                "score": variant,
                "avg_coverage": cell.avg_coverage,
                "avg_set_size": cell.avg_set_size,
                "set_size_se": cell.set_size_se,
                "oracle_avg_set_size": oracle,
                "bound": cell.bound,
                "bound_satisfied": not cell.invariant_failures(),
            })
            if progress is not None:
                progress(rows[-1])
    return rows


def drift_contrast(model: TrainedModel, cfg, seeds, progress=None) -> dict[tuple[str, float], list[float]]:
    """RMS deviation of the moving coverage from ``1 - alpha`` per (score, gamma), one entry per seed.

    Uses whatever schedule ``cfg`` describes; the headline comparison uses the
    ``drift`` preset.  Sets are not built, only the error sequence.
    """
    out: dict[tuple[str, float], list[float]] = {(v, g): [] for v in cfg.scores for g in cfg.gammas}
    n_samples = cfg.n_cal + cfg.n_test
    schedule = cfg.schedule(n_samples, cfg.shots)
    for seed in seeds:
        data = generate(seed, 0, cfg.n_cal, cfg.n_test)
        cal_shots, test_shots = simulate_stream(
            model, data.calibration, data.test, cfg.shots, schedule, cfg.clock(), seed, cfg.param_resolution
        )
        for variant in cfg.scores:
            for gamma in cfg.gammas:
                cell = run_cell(
                    data.calibration, data.test, cal_shots, test_shots, ScoreSpec(variant), gamma,
                    cfg.alpha, cfg.candidate_grid(), score_stream_seed(seed, variant), with_sets=False,
                )
                rms = rms_deviation(cell.coverage_ma(cfg.window), 1.0 - cfg.alpha)
                out[(variant, gamma)].append(rms)
                if progress is not None:
                    progress(seed, variant, gamma, rms, cell)
    return out
