"""Experiment cells, checked against replays through the plain score loop."""

import math

import numpy as np
import pytest

from aqcp.config import ExperimentConfig
from aqcp.conformal import CandidateGrid, coverage_bound, run_aqcp_scores
from aqcp.datagen import generate
from aqcp.experiments import (
    drift_contrast,
    efficiency_sweep,
    moving_coverage,
    rms_deviation,
    run_cell,
    score_stream_seed,
    simulate_stream,
)
from aqcp.model import AngleEncoder, AnsatzConfig, GridMap, TrainedModel
from aqcp.noise import Constant, NoiseSchedule
from aqcp.scores import ScoreSpec, raw_scores


@pytest.fixture(scope="module")
def tiny_model():
    config = AnsatzConfig(num_qubits=3, num_layers=2)
    enc = AngleEncoder.initialise((1, 4, config.num_parameters), seed=3)
    return TrainedModel(enc, config, GridMap(3))


@pytest.fixture(scope="module")
def stream(tiny_model):
    data = generate(1, 0, 40, 300)
    sched = NoiseSchedule("depolarising", Constant(0.02), Constant(0.01))
    cal_shots, test_shots = simulate_stream(tiny_model, data.calibration, data.test, 20, sched, seed=1)
    return data, cal_shots, test_shots


def replay_scores(data, cal_shots, test_shots, spec, seed, n_grid):
    """Tie-broken scores drawn in the documented order, independent of run_cell."""
    rng = np.random.default_rng(seed)
    cal = [raw_scores(spec, [y], s.values)[0] + rng.normal(0.0, spec.tiebreak_sigma) for (_, y), s in zip(data.calibration, cal_shots)]
    test = []
    for (_, y), s in zip(data.test, test_shots):
        noise = rng.normal(0.0, spec.tiebreak_sigma, size=n_grid + 1)
        test.append(raw_scores(spec, [y], s.values)[0] + noise[0])
    return cal, test


class TestMovingCoverage:
    def test_matches_loop(self, rng):
        c = rng.random(50) < 0.9
        ma = moving_coverage(c, 7)
        assert np.all(np.isnan(ma[:6]))
        for i in range(6, 50):
            assert ma[i] == pytest.approx(np.mean(c[i - 6 : i + 1]))

    def test_short_stream_all_nan(self):
        assert np.all(np.isnan(moving_coverage([1, 0, 1], 5)))

    def test_window_positive(self):
        with pytest.raises(ValueError):
            moving_coverage([1], 0)

    def test_rms_ignores_nan(self):
        assert rms_deviation([np.nan, 0.8, 1.0], 0.9) == pytest.approx(0.1)
        assert math.isnan(rms_deviation([np.nan], 0.9))


class TestRunCell:
    @pytest.mark.parametrize("variant", ["euc", "knn", "kde", "hdr"])
    def test_errors_match_score_replay(self, stream, variant):
        data, cal_shots, test_shots = stream
        spec = ScoreSpec(variant)
        seed = score_stream_seed(1, variant)
        cell = run_cell(data.calibration, data.test, cal_shots, test_shots, spec, 0.03, 0.1, seed=seed, with_sets=False)
        cal, test = replay_scores(data, cal_shots, test_shots, spec, score_stream_seed(1, variant), CandidateGrid().num_points)
        ref = run_aqcp_scores(cal, test, 0.1, 0.03)
        assert np.array_equal(cell.err, ref.err)
        assert np.array_equal(cell.lam, ref.lam)

    @pytest.mark.parametrize("variant", ["euc", "hdr"])
    def test_with_sets_same_errors(self, stream, variant):
        data, cal_shots, test_shots = stream
        args = (data.calibration, data.test, cal_shots, test_shots, ScoreSpec(variant), 0.03, 0.1)
        a = run_cell(*args, seed=score_stream_seed(1, variant), with_sets=True)
        b = run_cell(*args, seed=score_stream_seed(1, variant), with_sets=False)
        assert np.array_equal(a.err, b.err)
        assert np.all(np.isfinite(a.set_size)) and np.all(np.isnan(b.set_size))

    def test_gamma_contrast_shares_scores(self, stream):
        data, cal_shots, test_shots = stream
        args = (data.calibration, data.test, cal_shots, test_shots, ScoreSpec("knn"))
        a = run_cell(*args, 0.0, 0.1, seed=score_stream_seed(1, "knn"), with_sets=False)
        b = run_cell(*args, 0.03, 0.1, seed=score_stream_seed(1, "knn"), with_sets=False)
        assert a.lam[0] == b.lam[0]
        assert np.all(a.alpha_t == 0.1) and not np.all(b.alpha_t == 0.1)

    def test_invariants_and_bound(self, stream):
        data, cal_shots, test_shots = stream
        cell = run_cell(data.calibration, data.test, cal_shots, test_shots, ScoreSpec("kde"), 0.03, 0.1, seed=2)
        assert cell.invariant_failures() == []
        assert cell.bound == pytest.approx(coverage_bound(0.1, 0.03, 300))
        assert cell.ledger_size == 340
        assert abs(1 - cell.avg_coverage - 0.1) <= cell.bound

    def test_gamma_zero_bound_infinite(self, stream):
        data, cal_shots, test_shots = stream
        cell = run_cell(data.calibration, data.test[:5], cal_shots, test_shots[:5], ScoreSpec("euc"), 0.0, 0.1, with_sets=False)
        assert cell.bound == math.inf

    def test_timing_optional(self, stream):
        data, cal_shots, test_shots = stream
        args = (data.calibration, data.test[:5], cal_shots, test_shots[:5], ScoreSpec("euc"), 0.03, 0.1)
        assert run_cell(*args).wall_time_ms is None
        assert run_cell(*args, record_timing=True).wall_time_ms.shape == (5,)

    def test_membership_tracks_score(self, stream):
        data, cal_shots, test_shots = stream
        cell = run_cell(data.calibration, data.test, cal_shots, test_shots, ScoreSpec("euc"), 0.03, 0.1, seed=4)
        # labels inside the grid range: membership and score error agree up to grid snapping
        assert np.mean(cell.covered == (cell.err == 0)) >= 0.95


class TestSweeps:
    def test_efficiency_rows(self, tiny_model):
        cfg = ExperimentConfig(
            n_cal=20, efficiency_n_test=40, efficiency_shots=(1, 10), scores=("euc", "hdr"), num_qubits=3, num_layers=2,
        )
        rows = efficiency_sweep(tiny_model, cfg)
        assert [(r["M"], r["score"]) for r in rows] == [(1, "euc"), (1, "hdr"), (10, "euc"), (10, "hdr")]
        assert len({r["oracle_avg_set_size"] for r in rows}) == 1
        assert all(r["bound_satisfied"] for r in rows)

    def test_drift_contrast_shape(self, tiny_model):
        cfg = ExperimentConfig(n_cal=20, n_test=60, window=10, scores=("euc",), noise_preset="drift")
        calls = []
        res = drift_contrast(tiny_model, cfg, seeds=[0, 1], progress=lambda *a: calls.append(a))
        assert set(res) == {("euc", 0.0), ("euc", 0.03)}
        assert all(len(v) == 2 and all(np.isfinite(v)) for v in res.values())
        assert len(calls) == 4
