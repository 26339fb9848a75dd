"""Seeded synthetic data for the bimodal regression task.

``X ~ U(-10, 10)`` and ``Y | X=x`` is an equal mixture of ``N(-mu(x), 0.05^2)``
and ``N(mu(x), 0.05^2)`` with ``mu(x) = sin(0.8 x)/2 + x/20``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["X_LOW", "X_HIGH", "NOISE_SIGMA", "mu", "DatasetSplit", "generate", "sample_conditional", "save_dataset", "load_dataset"]

X_LOW, X_HIGH = -10.0, 10.0
NOISE_SIGMA = 0.05
SPLITS = ("train", "calibration", "test")


def mu(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.sin(0.8 * x) + x / 20.0


def sample_conditional(xs, rng: np.random.Generator) -> np.ndarray:
    """Draw one ``y`` per ``x``: fair coin for the component, then Gaussian noise."""
    xs = np.asarray(xs, dtype=float)
    sign = np.where(rng.random(xs.shape) < 0.5, -1.0, 1.0)
    return sign * mu(xs) + NOISE_SIGMA * rng.standard_normal(xs.shape)


def _draw(rng: np.random.Generator, n: int) -> np.ndarray:
    xs = rng.uniform(X_LOW, X_HIGH, size=n)
    ys = sample_conditional(xs, rng)
    return np.column_stack([xs, ys])


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray
    seed: int

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.calibration), len(self.test)

    def split(self, name: str) -> np.ndarray:
        return {"train": self.train, "calibration": self.calibration, "test": self.test}[name]


def generate(seed: int, n_tr: int = 1000, n_cal: int = 100, n_test: int = 9900) -> DatasetSplit:
    """Independent i.i.d. draws per split; each split has its own child stream."""
    if min(n_tr, n_cal, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    train, cal, test = (_draw(rng, n) for rng, n in zip(streams, (n_tr, n_cal, n_test)))
    return DatasetSplit(train, cal, test, seed)


def save_dataset(path, data: DatasetSplit) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "x", "y"])
        for name in SPLITS:
            for x, y in data.split(name):
                w.writerow([name, repr(float(x)), repr(float(y))])


def load_dataset(path, seed: int = -1) -> DatasetSplit:
    rows = {name: [] for name in SPLITS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["split", "x", "y"]:
            raise ValueError(f"{path}: expected header split,x,y")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or row[0] not in rows:
                raise ValueError(f"{path}:{lineno}: malformed dataset row {row!r}")
            try:
                rows[row[0]].append((float(row[1]), float(row[2])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    arrays = [np.array(rows[n], dtype=float).reshape(-1, 2) for n in SPLITS]
    return DatasetSplit(*arrays, seed=seed)
