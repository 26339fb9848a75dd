"""Command-line harness.

Every output file starts with ``# aqcp config_hash=... seed=...`` header lines,
followed by an ordinary CSV (or JSON for the model file).  Exit status is 0
only when every invariant check passed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .datagen import DatasetSplit, generate, load_dataset, save_dataset
from .experiments import drift_contrast, efficiency_sweep, run_cell, score_stream_seed, simulate_stream
from .model import AngleEncoder, AnsatzConfig, ConfigurationError, GridMap, TrainedModel, load_model, save_model
from .oracle import NumericError, optimal_set
from .scores import ScoreSpec
from .shots import ShotsFileError, load_shots_file, save_shots_file
from .training import TrainConfig, TrainingError, train

log = logging.getLogger("aqcp")

METRICS_COLUMNS = ["step", "alpha_t", "err", "covered", "set_size", "lambda", "coverage_ma", "wall_time_ms"]
SUMMARY_COLUMNS = [
    "score", "gamma", "n_steps", "avg_coverage", "avg_membership", "avg_set_size", "bound", "bound_satisfied",
    "alpha_t_min", "alpha_t_max", "invariants_ok",
]
EFFICIENCY_COLUMNS = ["M", "score", "avg_coverage", "avg_set_size", "set_size_se", "oracle_avg_set_size", "bound", "bound_satisfied"]


class HarnessError(RuntimeError):
    """A user-facing failure; the message is printed and the exit code is 1."""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _header_lines(cfg: ExperimentConfig, what: str) -> list[str]:
    return [f"# aqcp {what}", f"# config_hash={cfg.config_hash()} seed={cfg.seed}"]


def _write_table(path: Path, cfg, what, columns, rows):
    """Rows may be dicts keyed by column or sequences aligned with the columns."""
    norm = [[r[c] for c in columns] if isinstance(r, dict) else list(r) for r in rows]
    with open(path, "w", newline="") as fh:
        for line in _header_lines(cfg, what):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows([[_fmt(v) for v in r] for r in norm])


def read_csv_table(path) -> tuple[list[str], list[dict]]:
    """Read a harness CSV, skipping ``#`` header lines.  Returns (comments, rows)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    return comments, list(csv.DictReader(body))


# ---------------------------------------------------------------------------
# shared plumbing


def _dataset(cfg: ExperimentConfig) -> DatasetSplit:
    if cfg.dataset_path:
        p = Path(cfg.dataset_path)
        if not p.is_file():
            raise HarnessError(f"dataset file {p} not found")
        return load_dataset(p, seed=cfg.seed)
    return generate(cfg.seed, cfg.n_train, cfg.n_cal, cfg.n_test)


def _model_path(cfg: ExperimentConfig, out: Path) -> Path:
    return Path(cfg.model_path) if cfg.model_path else out / "model.json"


def _load_model(cfg: ExperimentConfig, out: Path) -> TrainedModel:
    path = _model_path(cfg, out)
    if not path.is_file():
        raise HarnessError(f"model file {path} not found; run `aqcp train` first or set model_path")
    try:
        return load_model(path)
    except (ConfigurationError, KeyError, ValueError) as exc:
        raise HarnessError(f"cannot load model {path}: {exc}") from exc


def _shots_for(cfg: ExperimentConfig, out: Path, data: DatasetSplit):
    """Calibration and test shots, replayed from a file or simulated."""
    n_cal = len(data.calibration)
    if cfg.shots_path:
        p = Path(cfg.shots_path)
        if not p.is_file():
            raise HarnessError(f"shots file {p} not found")
        try:
            table = load_shots_file(p)
        except ShotsFileError as exc:
            raise HarnessError(str(exc)) from exc
        need = n_cal + len(data.test)
        missing = [i for i in range(need) if i not in table]
        if missing:
            raise HarnessError(f"shots file {p} lacks sample indices starting at {missing[0]}")
        return [table[i] for i in range(n_cal)], [table[n_cal + i] for i in range(len(data.test))]
    model = _load_model(cfg, out)
    schedule = cfg.schedule(n_cal + len(data.test), cfg.shots)
    return simulate_stream(model, data.calibration, data.test, cfg.shots, schedule, cfg.clock(), cfg.seed, cfg.param_resolution)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(cfg: ExperimentConfig, out: Path, args) -> int:
    data = generate(cfg.seed, cfg.n_train, cfg.n_cal, cfg.n_test)
    path = out / "dataset.csv"
    save_dataset(path, data)
    print(f"wrote {path} ({'/'.join(map(str, data.sizes))} train/cal/test rows)")
    return 0


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    data = _dataset(cfg)
    config = AnsatzConfig(cfg.num_qubits, cfg.num_layers, cfg.entangler)
    sizes = (1, *cfg.hidden, config.num_parameters)
    encoder = AngleEncoder.initialise(sizes, seed=cfg.init_seed)
    tc = TrainConfig(cfg.epochs, cfg.lr, cfg.optimizer, cfg.batch_size or None, cfg.seed)
    grid = GridMap(cfg.num_qubits, cfg.y_min, cfg.y_max)
    try:
        result = train(data.train, encoder, config, tc, grid,
                       callback=lambda e, loss: print(f"epoch {e + 1} loss {loss:.6f}", flush=True))
    except TrainingError as exc:
        raise HarnessError(f"training diverged: {exc}") from exc
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "final_loss": result.loss_history[-1]}
    path = _model_path(cfg, out)
    save_model(path, TrainedModel(result.encoder, config, grid, meta))
    _write_table(out / "loss.csv", cfg, "training loss", ["epoch", "loss"],
                 [(i + 1, v) for i, v in enumerate(result.loss_history)])
    print(f"wrote {path} and {out / 'loss.csv'}")
    return 0


def cmd_sample_shots(cfg: ExperimentConfig, out: Path, args) -> int:
    data = _dataset(cfg)
    model = _load_model(cfg, out)
    n = len(data.calibration) + len(data.test)
    cal_shots, test_shots = simulate_stream(
        model, data.calibration, data.test, cfg.shots, cfg.schedule(n, cfg.shots), cfg.clock(), cfg.seed, cfg.param_resolution
    )
    table = dict(enumerate([*cal_shots, *test_shots]))
    path = out / "shots.csv"
    save_shots_file(path, table)
    print(f"wrote {path} ({n} samples x {cfg.shots} shots)")
    return 0


def cmd_run(cfg: ExperimentConfig, out: Path, args) -> int:
    data = _dataset(cfg)
    if len(data.calibration) == 0:
        raise HarnessError("calibration split is empty")
    cal_shots, test_shots = _shots_for(cfg, out, data)
    grid = cfg.candidate_grid()
    summary = []
    ok = True
    for variant in cfg.scores:
        for gamma in cfg.gammas:
            cell = run_cell(
                data.calibration, data.test, cal_shots, test_shots, ScoreSpec(variant), gamma, cfg.alpha, grid,
                score_stream_seed(cfg.seed, variant), with_sets=True, record_timing=cfg.record_timing,
                max_ledger=cfg.max_ledger or None,
            )
            ma = cell.coverage_ma(cfg.window)
            wall = cell.wall_time_ms if cell.wall_time_ms is not None else [None] * len(cell)
            rows = zip(range(1, len(cell) + 1), cell.alpha_t, cell.err, cell.covered, cell.set_size, cell.lam, ma, wall)
            name = f"metrics_{variant}_gamma{gamma:g}.csv"
            _write_table(out / name, cfg, f"metrics score={variant} gamma={gamma:g}", METRICS_COLUMNS, rows)
            bad = cell.invariant_failures()
            ok &= not bad
            for b in bad:
                print(f"invariant failed: {b} (score={variant}, gamma={gamma:g})", file=sys.stderr)
            summary.append({
                "score": variant, "gamma": gamma, "n_steps": len(cell), "avg_coverage": cell.avg_coverage,
                "avg_membership": cell.avg_membership, "avg_set_size": cell.avg_set_size, "bound": cell.bound,
                "bound_satisfied": "coverage bound" not in bad,
                "alpha_t_min": float(np.min(cell.alpha_t)) if len(cell) else None,
                "alpha_t_max": float(np.max(cell.alpha_t)) if len(cell) else None,
                "invariants_ok": not bad,
            })
            print(f"{variant:>4} gamma={gamma:g}: coverage {cell.avg_coverage:.4f} size {cell.avg_set_size:.4f}")
    _write_table(out / "summary.csv", cfg, "run summary", SUMMARY_COLUMNS, summary)
    return 0 if ok else 1


def cmd_efficiency(cfg: ExperimentConfig, out: Path, args) -> int:
    model = _load_model(cfg, out)
    rows = efficiency_sweep(model, cfg, progress=lambda r: print(
        f"M={r['M']:>4} {r['score']:>4}: coverage {r['avg_coverage']:.4f} size {r['avg_set_size']:.4f}", flush=True))
    _write_table(out / "efficiency.csv", cfg, "efficiency", EFFICIENCY_COLUMNS, rows)
    return 0 if all(r["bound_satisfied"] for r in rows) else 1


def cmd_oracle(cfg: ExperimentConfig, out: Path, args) -> int:
    xs = generate(cfg.seed, 0, 0, cfg.n_test).test[:, 0]
    grid = cfg.candidate_grid()
    rows = []
    try:
        for i, x in enumerate(xs):
            o = optimal_set(float(x), cfg.alpha, grid)
            rows.append((i, float(x), o.size, o.length, o.mass))
    except NumericError as exc:
        raise HarnessError(f"oracle integration failed: {exc}") from exc
    arr = np.array([r[2:] for r in rows]).reshape(-1, 3)
    mean = arr.mean(axis=0) if len(arr) else [math.nan] * 3
    rows.append(("mean", None, *mean))
    _write_table(out / "oracle.csv", cfg, f"oracle alpha={cfg.alpha:g}", ["index", "x", "size", "length", "mass"], rows)
    print(f"mean optimal set size {mean[0]:.6f} (length {mean[1]:.6f}) over {len(xs)} inputs")
    return 0


def cmd_drift(cfg: ExperimentConfig, out: Path, args) -> int:
    model = _load_model(cfg, out)
    seeds = range(cfg.seed, cfg.seed + args.num_seeds)
    res = drift_contrast(model, cfg, seeds)
    rows = []
    ok = True
    for variant in cfg.scores:
        med = {g: float(np.median(res[(variant, g)])) for g in cfg.gammas}
        for g in cfg.gammas:
            rows.append((variant, g, med[g], *res[(variant, g)]))
        if 0.0 in med and len(med) > 1:
            best = min((g for g in med if g > 0), key=lambda g: med[g])
            ok &= med[best] < med[0.0]
    cols = ["score", "gamma", "median_rms", *[f"rms_seed{s}" for s in seeds]]
    _write_table(out / "drift.csv", cfg, "drift contrast", cols, rows)
    return 0 if ok else 1


COMMANDS = {
    "generate-data": (cmd_generate_data, "write a seeded train/calibration/test dataset"),
    "train": (cmd_train, "train the angle encoder and write the model file and loss CSV"),
    "sample-shots": (cmd_sample_shots, "simulate timestamped shots for calibration and test inputs"),
    "run": (cmd_run, "run adaptive conformal prediction per (gamma, score) cell"),
    "efficiency": (cmd_efficiency, "average set size per shot count and score, with the oracle column"),
    "oracle": (cmd_oracle, "optimal set sizes over the test inputs"),
    "drift": (cmd_drift, "RMS moving-coverage deviation per (score, gamma) over several seeds"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqcp", description="Adaptive conformal prediction for quantum regression models.")
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; may be repeated")
    parser.add_argument("--print-config", action="store_true", help="echo the effective config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if name == "drift":
            p.add_argument("--num-seeds", type=int, default=10)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.overrides:
        cfg = parse_config_text("\n".join(args.overrides), base=cfg)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(f"# config_hash={cfg.config_hash()}\n" + cfg.dump())
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command][0](cfg, out, args)
    except (HarnessError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
