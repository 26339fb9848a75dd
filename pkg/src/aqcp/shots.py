"""Timestamped shot sampling and the shots CSV format.

Every shot gets a timestamp from a :class:`ShotClock`; the noise schedule is
evaluated at that timestamp.  Shots whose schedule parameters agree to within
``param_resolution`` share one simulated outcome distribution, which keeps
drifting-noise runs tractable.  Each sample index draws from its own RNG
stream ``default_rng([seed, index])``, so results do not depend on how the
simulation is batched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import AngleEncoder, AnsatzConfig, GridMap, circuit_probabilities
from .noise import NoiseSchedule

__all__ = [
    "ShotClock",
    "ShotMultiset",
    "ShotsFileError",
    "sample_shots",
    "sample_shot_sets",
    "save_shots_file",
    "load_shots_file",
    "SHOTS_HEADER",
]

SHOTS_HEADER = ["sample_index", "x", "t_seconds", "bitstring", "y_mapped"]


class ShotsFileError(ValueError):
    pass


@dataclass(frozen=True)
class ShotClock:
    """Shot ``m`` overall fires at ``t0 + m*dt``, plus ``batch_gap`` after every
    ``batch_size`` circuits (sample indices)."""

    t0: float = 0.0
    dt: float = 1e-3
    batch_size: int | None = None
    batch_gap: float = 0.0

    def times(self, sample_index, shots_per_sample: int) -> np.ndarray:
        idx = np.asarray(sample_index)
        m = np.arange(shots_per_sample)
        base = self.t0 + (idx[..., None] * shots_per_sample + m) * self.dt
        if self.batch_size:
            base = base + (idx[..., None] // self.batch_size) * self.batch_gap
        return base

    def stream_duration(self, n_samples: int, shots_per_sample: int) -> float:
        return float(self.times(n_samples - 1, shots_per_sample)[-1] - self.t0)


@dataclass
class ShotMultiset:
    """Measured shots for one input ``x``; duplicates are meaningful."""

    x: float
    times: np.ndarray
    indices: np.ndarray
    grid: GridMap = field(default_factory=GridMap)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.times.shape != self.indices.shape:
            raise ValueError("times and indices must align")

    @property
    def values(self) -> np.ndarray:
        return self.grid.map_index(self.indices)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def records(self) -> list[tuple[float, str, float]]:
        ys = self.values
        return [
            (float(t), self.grid.bitstring(b), float(y))
            for t, b, y in zip(self.times, self.indices, ys)
        ]

    @classmethod
    def from_values(cls, x: float, values, grid: GridMap | None = None, times=None) -> "ShotMultiset":
        grid = grid or GridMap()
        idx = grid.nearest_index(values)
        if not np.allclose(grid.map_index(idx), values, atol=1e-9):
            raise ValueError("values are not on the grid lattice")
        times = np.zeros(len(idx)) if times is None else times
        return cls(x, times, idx, grid)


def _draw_indices(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    hit = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(hit, probs.shape[-1] - 1)


def sample_shot_sets(
    xs: Sequence[float],
    num_shots: int,
    encoder: AngleEncoder,
    config: AnsatzConfig,
    schedule: NoiseSchedule,
    clock: ShotClock | None = None,
    seed: int = 0,
    sample_indices: Sequence[int] | None = None,
    grid: GridMap | None = None,
    param_resolution: float = 1e-4,
) -> list[ShotMultiset]:
    """``num_shots`` timestamped shots for each input; sample ``i`` uses RNG ``[seed, i]``."""
    if num_shots < 1:
        raise ValueError("need at least one shot per sample")
    xs = np.asarray(xs, dtype=float)
    clock = clock or ShotClock()
    grid = grid or GridMap(config.num_qubits)
    idx = np.arange(len(xs)) if sample_indices is None else np.asarray(sample_indices)
    times = clock.times(idx, num_shots)  # (n, M)
    p = schedule.gate_parameter(times) if schedule.applies_after_each_gate else np.zeros(times.shape)
    q = schedule.readout_parameter(times)
    if param_resolution > 0:
        p = np.round(p / param_resolution) * param_resolution
        q = np.round(q / param_resolution) * param_resolution
    p = np.clip(p, 0.0, 1.0)
    q = np.clip(q, 0.0, 1.0)
    # one simulation per distinct (sample, p, q)
    keys = np.column_stack([np.repeat(np.arange(len(xs)), num_shots), p.ravel(), q.ravel()])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    angles = encoder.forward(xs[uniq[:, 0].astype(int)])
    probs = circuit_probabilities(angles, config, family=schedule.family, gate_param=uniq[:, 1], readout_flip=uniq[:, 2])
    job = inverse.reshape(len(xs), num_shots)
    out = []
    for i, sid in enumerate(idx):
        rng = np.random.default_rng([int(seed), int(sid)])
        u = rng.random(num_shots)
        bits = _draw_indices(probs[job[i]], u)
        out.append(ShotMultiset(float(xs[i]), times[i], bits, grid))
    return out


def sample_shots(
    x: float,
    num_shots: int,
    encoder: AngleEncoder,
    config: AnsatzConfig,
    schedule: NoiseSchedule,
    clock: ShotClock | None = None,
    seed: int = 0,
    sample_index: int = 0,
    **kwargs,
) -> ShotMultiset:
    return sample_shot_sets([x], num_shots, encoder, config, schedule, clock, seed, [sample_index], **kwargs)[0]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_shots_file(path, shot_sets: dict[int, ShotMultiset]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHOTS_HEADER)
        for sid in sorted(shot_sets):
            s = shot_sets[sid]
            for t, bits, y in s.records:
                w.writerow([sid, _fmt(s.x), _fmt(t), bits, _fmt(y)])


def load_shots_file(path, grid: GridMap | None = None) -> dict[int, ShotMultiset]:
    """Parse a shots CSV.  Bitstring width fixes Q (from ``grid`` or the first row)."""
    rows: dict[int, list] = {}
    xs: dict[int, float] = {}
    nq = grid.num_qubits if grid is not None else None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SHOTS_HEADER:
            raise ShotsFileError(f"{path}:1: expected header {','.join(SHOTS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ShotsFileError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                sid = int(row[0])
                x, t, y = float(row[1]), float(row[2]), float(row[4])
            except ValueError as exc:
                raise ShotsFileError(f"{path}:{lineno}: {exc}") from exc
            bits = row[3]
            if nq is None:
                nq = len(bits)
            if len(bits) != nq or set(bits) - {"0", "1"}:
                raise ShotsFileError(f"{path}:{lineno}: bitstring {bits!r} is not {nq} binary digits")
            if grid is None:
                grid = GridMap(nq)
            if abs(grid.map_bitstring(bits) - y) > 1e-9:
                raise ShotsFileError(f"{path}:{lineno}: y_mapped {y} does not match bitstring {bits}")
            if sid in xs and xs[sid] != x:
                raise ShotsFileError(f"{path}:{lineno}: sample {sid} has conflicting x values")
            xs[sid] = x
            rows.setdefault(sid, []).append((t, int(bits, 2)))
    out = {}
    for sid, recs in rows.items():
        t, b = zip(*recs)
        out[sid] = ShotMultiset(xs[sid], np.array(t), np.array(b), grid)
    return out
