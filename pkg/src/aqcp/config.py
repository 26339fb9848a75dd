"""Flat ``key = value`` experiment configuration with a typed schema.

Lines starting with ``#`` are comments.  Unknown keys and out-of-range values
are rejected at load time.  ``config_hash`` is a SHA-256 over the canonical
dump, embedded in every output file header.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .conformal import CandidateGrid
from .noise import Burst, SimulationError, Constant, LinearDrift, NoiseSchedule, parse_param_spec
from .scores import SCORE_VARIANTS
from .shots import ShotClock

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "default_shot_counts", "NOISE_PRESETS"]

NOISE_PRESETS = ("none", "stationary", "drift", "custom")


class ConfigError(ValueError):
    pass


def default_shot_counts() -> tuple[int, ...]:
    """Ten log-spaced shot counts from 1 to 1000."""
    return tuple(int(v) for v in np.unique(np.rint(np.logspace(0, 3, 10))).astype(int))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_path(text: str):
    return text.strip() or None


_PARSERS = {
    "int": int,
    "float": float,
    "str": str.strip,
    "bool": _bool,
    "floats": _floats,
    "ints": _ints,
    "strs": _strs,
    "path": _opt_path,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    alpha: float = 0.1
    gammas: tuple[float, ...] = (0.0, 0.03)
    scores: tuple[str, ...] = SCORE_VARIANTS
    window: int = 500
    n_train: int = 1000
    n_cal: int = 100
    n_test: int = 9900
    shots: int = 100
    efficiency_shots: tuple[int, ...] = default_shot_counts()
    efficiency_n_test: int = 2000
    efficiency_gamma: float = 0.03
    epochs: int = 30
    lr: float = 0.01
    optimizer: str = "gd"
    batch_size: int = 32
    init_seed: int = 0
    num_qubits: int = 5
    num_layers: int = 5
    entangler: str = "linear"
    hidden: tuple[int, ...] = (10, 10)
    y_min: float = -1.5
    y_max: float = 1.5
    noise_preset: str = "none"
    noise_family: str = "depolarising"
    gate_noise: str = "constant(0.0)"
    readout_noise: str = "constant(0.0)"
    shot_dt: float = 1e-3
    circuit_batch: int = 1000
    batch_gap: float = 0.0
    param_resolution: float = 1e-4
    grid_lo: float = -1.5
    grid_hi: float = 1.5
    grid_points: int = 301
    max_ledger: int = 0
    record_timing: bool = False
    model_path: str | None = None
    dataset_path: str | None = None
    shots_path: str | None = None

    def __post_init__(self):
        self.validate()

    # schema -----------------------------------------------------------
    @staticmethod
    def kinds() -> dict[str, str]:
        return {
            "seed": "int", "alpha": "float", "gammas": "floats", "scores": "strs", "window": "int",
            "n_train": "int", "n_cal": "int", "n_test": "int", "shots": "int",
            "efficiency_shots": "ints", "efficiency_n_test": "int", "efficiency_gamma": "float",
            "epochs": "int", "lr": "float", "optimizer": "str", "batch_size": "int", "init_seed": "int",
            "num_qubits": "int", "num_layers": "int", "entangler": "str", "hidden": "ints",
            "y_min": "float", "y_max": "float", "noise_preset": "str", "noise_family": "str",
            "gate_noise": "str", "readout_noise": "str", "shot_dt": "float", "circuit_batch": "int",
            "batch_gap": "float", "param_resolution": "float", "grid_lo": "float", "grid_hi": "float",
            "grid_points": "int", "max_ledger": "int", "record_timing": "bool",
            "model_path": "path", "dataset_path": "path", "shots_path": "path",
        }

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)")
        need(all(g >= 0 for g in self.gammas) and self.gammas, "gammas must be non-negative")
        need(set(self.scores) <= set(SCORE_VARIANTS) and self.scores, f"scores must be drawn from {SCORE_VARIANTS}")
        need(self.window >= 1, "window must be positive")
        need(self.n_train >= 0 and self.n_cal >= 1 and self.n_test >= 0, "bad split sizes")
        need(self.shots >= 1 and all(m >= 1 for m in self.efficiency_shots), "shot counts must be positive")
        need(self.efficiency_n_test >= 1, "efficiency_n_test must be positive")
        need(self.epochs >= 1 and self.lr >= 0, "epochs >= 1 and lr >= 0 required")
        need(self.optimizer in ("gd", "adam"), "optimizer must be gd or adam")
        need(self.batch_size >= 0, "batch_size must be >= 0 (0 = full batch)")
        need(1 <= self.num_qubits <= 10 and self.num_layers >= 1, "bad ansatz size")
        need(self.entangler in ("linear", "circular", "full"), "bad entangler")
        need(self.y_max > self.y_min and self.grid_hi > self.grid_lo and self.grid_points >= 2, "bad grid")
        need(self.noise_preset in NOISE_PRESETS, f"noise_preset must be one of {NOISE_PRESETS}")
        need(self.shot_dt > 0 and self.batch_gap >= 0 and self.circuit_batch >= 1, "bad clock")
        need(self.param_resolution >= 0, "param_resolution must be >= 0")
        need(self.max_ledger >= 0, "max_ledger must be >= 0 (0 = unbounded)")
        try:
            self.schedule()
            NoiseSchedule(self.noise_family, parse_param_spec(self.gate_noise), parse_param_spec(self.readout_noise))
        except (ValueError, SimulationError) as exc:
            raise ConfigError(f"bad noise configuration: {exc}") from exc

    # derived objects --------------------------------------------------
    def candidate_grid(self) -> CandidateGrid:
        return CandidateGrid(self.grid_lo, self.grid_hi, self.grid_points)

    def clock(self) -> ShotClock:
        return ShotClock(0.0, self.shot_dt, self.circuit_batch, self.batch_gap)

    def stream_duration(self, n_samples: int | None = None, shots: int | None = None) -> float:
        n = n_samples if n_samples is not None else self.n_cal + self.n_test
        return self.clock().stream_duration(n, shots or self.shots)

    def schedule(self, n_samples: int | None = None, shots: int | None = None) -> NoiseSchedule:
        preset = self.noise_preset
        if preset == "none":
            return NoiseSchedule(self.noise_family)
        if preset == "stationary":
            return NoiseSchedule("depolarising", Constant(0.002), Constant(0.01))
        if preset == "drift":
            return drift_schedule(self.stream_duration(n_samples, shots))
        return NoiseSchedule(self.noise_family, parse_param_spec(self.gate_noise), parse_param_spec(self.readout_noise))

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(e) for e in v)
            elif v is None:
                v = ""
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def drift_schedule(duration: float) -> NoiseSchedule:
    """Pinned drifting schedule: depolarising 0.01 -> 0.15 over the stream plus two bursts."""
    drift = LinearDrift(0.01, 0.15, duration)
    gate = Burst(drift, 0.25, (0.4 * duration, 0.75 * duration), 0.05 * duration)
    return NoiseSchedule("depolarising", gate, Constant(0.01))


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    kinds = ExperimentConfig.kinds()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[kinds[key]](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return replace(base or ExperimentConfig(), **values)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(p.read_text())
