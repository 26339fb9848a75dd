"""End-to-end harness runs on a tiny configuration."""

import math

import pytest

from aqcp.cli import METRICS_COLUMNS, SUMMARY_COLUMNS, main, read_csv_table
from aqcp.conformal import coverage_bound

TINY = """\
num_qubits = 3
num_layers = 1
hidden = 4
n_train = 30
n_cal = 20
n_test = 60
epochs = 2
window = 10
efficiency_shots = 1,10
efficiency_n_test = 30
shots = 20
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


@pytest.fixture
def trained(tmp_path, cfg_file):
    out = tmp_path / "out"
    assert main(["--config", str(cfg_file), "--out", str(out), "train"]) == 0
    return out


def run(cfg_file, out, *rest):
    return main(["--config", str(cfg_file), "--out", str(out), *rest])


class TestConfigHandling:
    def test_print_config(self, cfg_file, capsys):
        assert main(["--config", str(cfg_file), "--seed", "7", "--print-config"]) == 0
        text = capsys.readouterr().out
        assert text.startswith("# config_hash=")
        assert "seed = 7" in text and "num_qubits = 3" in text

    def test_set_override(self, capsys):
        assert main(["--set", "alpha=0.2", "--print-config"]) == 0
        assert "alpha = 0.2" in capsys.readouterr().out

    def test_bad_config_exit_two(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("alpha = 3\n")
        assert main(["--config", str(p), "run"]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_no_command(self, capsys):
        assert main([]) == 2


class TestGenerateAndTrain:
    def test_dataset_reproducible(self, tmp_path, cfg_file):
        run(cfg_file, tmp_path / "a", "generate-data")
        run(cfg_file, tmp_path / "b", "generate-data")
        a = (tmp_path / "a" / "dataset.csv").read_bytes()
        assert a == (tmp_path / "b" / "dataset.csv").read_bytes()
        assert a.decode().splitlines()[0] == "split,x,y"

    def test_one_epoch_one_row(self, tmp_path, cfg_file):
        assert main(["--config", str(cfg_file), "--set", "epochs=1", "--out", str(tmp_path), "train"]) == 0
        comments, rows = read_csv_table(tmp_path / "loss.csv")
        assert len(rows) == 1 and list(rows[0]) == ["epoch", "loss"]
        assert any("config_hash=" in c for c in comments)

    def test_model_byte_identical(self, tmp_path, cfg_file, trained):
        run(cfg_file, tmp_path / "again", "train")
        assert (trained / "model.json").read_bytes() == (tmp_path / "again" / "model.json").read_bytes()

    def test_divergence_exit(self, tmp_path, cfg_file, capsys):
        code = main(["--config", str(cfg_file), "--set", "lr=1e300", "--set", "epochs=3", "--out", str(tmp_path), "train"])
        assert code == 1
        assert "diverged" in capsys.readouterr().err


class TestRun:
    def test_missing_model(self, tmp_path, cfg_file, capsys):
        assert run(cfg_file, tmp_path, "run") == 1
        assert "model file" in capsys.readouterr().err

    def test_outputs(self, cfg_file, trained):
        assert run(cfg_file, trained, "run") == 0
        comments, summary = read_csv_table(trained / "summary.csv")
        assert list(summary[0]) == SUMMARY_COLUMNS
        assert len(summary) == 8
        for row in summary:
            assert row["bound_satisfied"] == "true" and row["invariants_ok"] == "true"
            if float(row["gamma"]) > 0:
                assert float(row["bound"]) == pytest.approx(coverage_bound(0.1, float(row["gamma"]), 60))
            else:
                assert row["bound"] == "inf"
        comments, metrics = read_csv_table(trained / "metrics_hdr_gamma0.03.csv")
        assert comments[1].startswith("# config_hash=") and comments[1].endswith("seed=0")
        assert list(metrics[0]) == METRICS_COLUMNS
        assert len(metrics) == 60
        assert all(r["coverage_ma"] == "" for r in metrics[:9])
        assert all(0 <= float(r["coverage_ma"]) <= 1 for r in metrics[9:])
        assert all(r["wall_time_ms"] == "" for r in metrics)

    def test_rerun_byte_identical(self, tmp_path, cfg_file, trained):
        run(cfg_file, trained, "run")
        first = {p.name: p.read_bytes() for p in trained.glob("metrics_*.csv")}
        run(cfg_file, trained, "run")
        assert first == {p.name: p.read_bytes() for p in trained.glob("metrics_*.csv")}

    def test_shots_replay_matches_simulation(self, cfg_file, trained, tmp_path):
        assert run(cfg_file, trained, "sample-shots") == 0
        run(cfg_file, trained, "run")
        sim = read_csv_table(trained / "metrics_kde_gamma0.03.csv")[1]
        replay_out = tmp_path / "replay"
        code = main(["--config", str(cfg_file), "--set", f"shots_path={trained / 'shots.csv'}", "--out", str(replay_out), "run"])
        assert code == 0
        assert read_csv_table(replay_out / "metrics_kde_gamma0.03.csv")[1] == sim

    def test_missing_shots_file(self, cfg_file, tmp_path):
        assert main(["--config", str(cfg_file), "--set", "shots_path=nope.csv", "--out", str(tmp_path), "run"]) == 1

    def test_gamma_cells_share_first_threshold(self, cfg_file, trained):
        run(cfg_file, trained, "run")
        a = read_csv_table(trained / "metrics_euc_gamma0.csv")[1]
        b = read_csv_table(trained / "metrics_euc_gamma0.03.csv")[1]
        assert a[0]["lambda"] == b[0]["lambda"]
        assert {r["alpha_t"] for r in a} == {"0.1"}


class TestOtherCommands:
    def test_oracle_nested(self, tmp_path, cfg_file):
        run(cfg_file, tmp_path / "a", "oracle")
        main(["--config", str(cfg_file), "--set", "alpha=0.5", "--out", str(tmp_path / "b"), "oracle"])
        a = read_csv_table(tmp_path / "a" / "oracle.csv")[1]
        b = read_csv_table(tmp_path / "b" / "oracle.csv")[1]
        assert a[-1]["index"] == "mean" and len(a) == 61
        for ra, rb in zip(a[:-1], b[:-1]):
            assert float(rb["length"]) < float(ra["length"])
            assert float(ra["mass"]) == pytest.approx(0.9, abs=1e-4)

    def test_oracle_reproducible(self, tmp_path, cfg_file):
        run(cfg_file, tmp_path / "a", "oracle")
        run(cfg_file, tmp_path / "b", "oracle")
        assert (tmp_path / "a" / "oracle.csv").read_bytes() == (tmp_path / "b" / "oracle.csv").read_bytes()

    def test_efficiency(self, cfg_file, trained):
        assert run(cfg_file, trained, "efficiency") == 0
        rows = read_csv_table(trained / "efficiency.csv")[1]
        assert len(rows) == 8
        assert len({r["oracle_avg_set_size"] for r in rows}) == 1

    def test_drift(self, cfg_file, trained):
        code = main(["--config", str(cfg_file), "--set", "noise_preset=drift", "--out", str(trained), "drift", "--num-seeds", "2"])
        assert code in (0, 1)
        rows = read_csv_table(trained / "drift.csv")[1]
        assert len(rows) == 8
        assert all(math.isfinite(float(r["median_rms"])) for r in rows)
