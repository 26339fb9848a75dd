"""Parametrised-circuit regression model.

A small feed-forward angle encoder maps a scalar input ``x`` to the 3LQ
rotation angles of a hardware-efficient ansatz (RZ-RY-RZ on every qubit,
then a CZ entangling pattern, repeated L times).  Measured bitstrings are
decoded onto a uniform grid of target values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .noise import NoiseSchedule
from .qsim import (
    Gate,
    apply_1q_batch,
    apply_superop_batch,
    channel_superoperator,
    diagonal_phase,
    kraus_operators,
    readout_flip_batch,
    rotation_matrix,
    superoperator,
)

__all__ = [
    "ConfigurationError",
    "AnsatzConfig",
    "AngleEncoder",
    "GridMap",
    "build_circuit",
    "encoder_forward",
    "circuit_probabilities",
    "model_probabilities",
    "TrainedModel",
    "schedule_probabilities",
    "map_bitstring",
    "save_model",
    "load_model",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1
ENTANGLERS = ("linear", "circular", "full")
ROTATION_ORDER = ("RZ", "RY", "RZ")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AnsatzConfig:
    num_qubits: int = 5
    num_layers: int = 5
    entangler: str = "linear"

    def __post_init__(self):
        if self.num_qubits < 1 or self.num_layers < 1:
            raise ConfigurationError("num_qubits and num_layers must be positive")
        if self.entangler not in ENTANGLERS:
            raise ConfigurationError(f"entangler must be one of {ENTANGLERS}")

    @property
    def num_parameters(self) -> int:
        return 3 * self.num_layers * self.num_qubits

    def cz_pairs(self) -> list[tuple[int, int]]:
        q = self.num_qubits
        if self.entangler == "full":
            return list(combinations(range(q), 2))
        pairs = [(k, k + 1) for k in range(q - 1)]
        if self.entangler == "circular" and q > 2:
            pairs.append((q - 1, 0))
        return pairs

    def angle_index(self, layer: int, qubit: int, slot: int) -> int:
        return (layer * self.num_qubits + qubit) * 3 + slot


@dataclass(frozen=True)
class GridMap:
    """Bitstring decoder ``f(b) = y_min + k * int(b)`` with ``k = (y_max - y_min)/(2^Q - 1)``."""

    num_qubits: int = 5
    y_min: float = -1.5
    y_max: float = 1.5

    def __post_init__(self):
        if self.y_max <= self.y_min:
            raise ConfigurationError("y_max must exceed y_min")

    @property
    def spacing(self) -> float:
        return (self.y_max - self.y_min) / (2**self.num_qubits - 1)

    @property
    def values(self) -> np.ndarray:
        return self.y_min + self.spacing * np.arange(2**self.num_qubits)

    def map_index(self, index):
        return self.y_min + self.spacing * np.asarray(index)

    def map_bitstring(self, bits: str) -> float:
        if len(bits) != self.num_qubits or set(bits) - {"0", "1"}:
            raise ValueError(f"bitstring {bits!r} is not {self.num_qubits} binary digits")
        return float(self.map_index(int(bits, 2)))

    def bitstring(self, index: int) -> str:
        return format(int(index), f"0{self.num_qubits}b")

    def nearest_index(self, y):
        idx = np.rint((np.asarray(y, dtype=float) - self.y_min) / self.spacing)
        return np.clip(idx, 0, 2**self.num_qubits - 1).astype(int)


def map_bitstring(bits: str, grid: GridMap) -> float:
    return grid.map_bitstring(bits)


# ---------------------------------------------------------------------------
# Encoder


def elu(z):
    return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class AngleEncoder:
    """Fully connected net ``(1, h1, ..., P)``; ELU on hidden layers, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("encoder needs matching weight and bias lists")
        prev = 1
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != prev or b.shape != (w.shape[0],):
                raise ConfigurationError(f"inconsistent layer shapes {w.shape} / {b.shape}")
            prev = w.shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (1,) + tuple(w.shape[0] for w in self.weights)

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[0]

    @classmethod
    def initialise(cls, layer_sizes, seed: int = 0) -> "AngleEncoder":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, layer_sizes) -> "AngleEncoder":
        return cls(
            [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])],
            [np.zeros(o) for o in layer_sizes[1:]],
        )

    def copy(self) -> "AngleEncoder":
        return AngleEncoder([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts)

    def with_flat(self, vec: np.ndarray) -> "AngleEncoder":
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(vec[pos : pos + b.size].copy())
            pos += b.size
        return AngleEncoder(weights, biases)

    def forward(self, xs) -> np.ndarray:
        return self._forward(xs)[0]

    def _forward(self, xs):
        a = np.asarray(xs, dtype=float).reshape(-1, 1)
        cache = [(a, None)]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else elu(z)
            cache.append((a, z))
        return a, cache

    def backward(self, xs, grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * forward(xs))`` w.r.t. weights and biases."""
        _, cache = self._forward(xs)
        g = np.asarray(grad_out, dtype=float)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            _, z = cache[i + 1]
            if i != last:
                g = g * elu_grad(z)
            a_prev = cache[i][0]
            gw[i] = g.T @ a_prev
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        return gw, gb


def encoder_forward(x: float, encoder: AngleEncoder) -> np.ndarray:
    return encoder.forward([x])[0]


# ---------------------------------------------------------------------------
# Circuit construction and batched simulation


def build_circuit(x: float, encoder: AngleEncoder, config: AnsatzConfig) -> list[Gate]:
    """Gate list for input ``x``, in application order."""
    if encoder.output_size != config.num_parameters:
        raise ConfigurationError(
            f"encoder emits {encoder.output_size} angles, ansatz needs {config.num_parameters}"
        )
    return circuit_from_angles(encoder_forward(x, encoder), config)


def circuit_from_angles(angles, config: AnsatzConfig) -> list[Gate]:
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (config.num_parameters,):
        raise ConfigurationError(f"expected {config.num_parameters} angles, got {angles.shape}")
    gates = []
    for layer in range(config.num_layers):
        for q in range(config.num_qubits):
            for slot, kind in enumerate(ROTATION_ORDER):
                gates.append(Gate(kind, (q,), float(angles[config.angle_index(layer, q, slot)])))
        for a, b in config.cz_pairs():
            gates.append(Gate("CZ", (a, b)))
    return gates


def _layer_angles(angles: np.ndarray, config: AnsatzConfig) -> np.ndarray:
    return angles.reshape(angles.shape[0], config.num_layers, config.num_qubits, 3)


def _statevector_probabilities(angles: np.ndarray, config: AnsatzConfig) -> np.ndarray:
    q = config.num_qubits
    b = angles.shape[0]
    psi = np.zeros((b, 2**q), dtype=complex)
    psi[:, 0] = 1.0
    psi = psi.reshape((b,) + (2,) * q)
    sign = diagonal_phase(q, config.cz_pairs()).reshape((1,) + (2,) * q)
    th = _layer_angles(angles, config)
    for layer in range(config.num_layers):
        for qubit in range(q):
            u = rotation_matrix("RZ", th[:, layer, qubit, 0])
            u = rotation_matrix("RY", th[:, layer, qubit, 1]) @ u
            u = rotation_matrix("RZ", th[:, layer, qubit, 2]) @ u
            psi = apply_1q_batch(psi, u, qubit)
        psi = psi * sign
    probs = np.abs(psi.reshape(b, -1)) ** 2
    return probs


def _density_probabilities(angles: np.ndarray, config: AnsatzConfig, family: str, p: np.ndarray) -> np.ndarray:
    # Each rotation and the channel after it act on one qubit, so the three
    # rotation+channel pairs of a layer fold into one 4x4 superoperator.
    q = config.num_qubits
    b = angles.shape[0]
    d = 2**q
    rho = np.zeros((b, d, d), dtype=complex)
    rho[:, 0, 0] = 1.0
    rho = rho.reshape((b,) + (2,) * (2 * q))
    noise = channel_superoperator(kraus_operators(family, p))
    th = _layer_angles(angles, config)
    pairs = config.cz_pairs()
    cz_signs = [np.outer(s, s).reshape((1,) + (2,) * (2 * q)) for s in (diagonal_phase(q, [pr]) for pr in pairs)]
    for layer in range(config.num_layers):
        for qubit in range(q):
            sop = None
            for slot, kind in enumerate(ROTATION_ORDER):
                step = noise @ superoperator(rotation_matrix(kind, th[:, layer, qubit, slot]))
                sop = step if sop is None else step @ sop
            rho = apply_superop_batch(rho, sop, qubit, q)
        for pair, s in zip(pairs, cz_signs):
            rho = rho * s
            for t in pair:
                rho = apply_superop_batch(rho, noise, t, q)
    return np.real(np.einsum("bii->bi", rho.reshape(b, d, d)))


def circuit_probabilities(
    angles,
    config: AnsatzConfig,
    family: str = "depolarising",
    gate_param=0.0,
    readout_flip=0.0,
    chunk: int = 512,
) -> np.ndarray:
    """Outcome distributions for a batch of angle vectors, shape (B, 2^Q).

    ``gate_param`` and ``readout_flip`` are scalars or per-row arrays.  Rows
    without gate noise go through the statevector path; noisy rows through
    the density-matrix path with the channel after every gate.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    if angles.shape[1] != config.num_parameters:
        raise ConfigurationError(f"expected {config.num_parameters} angles per row")
    b = angles.shape[0]
    p = np.broadcast_to(np.asarray(gate_param, dtype=float), (b,))
    flip = np.broadcast_to(np.asarray(readout_flip, dtype=float), (b,))
    out = np.empty((b, 2**config.num_qubits))
    clean = p == 0
    idx_clean = np.flatnonzero(clean)
    idx_noisy = np.flatnonzero(~clean)
    for start in range(0, idx_clean.size, chunk * 8):
        sel = idx_clean[start : start + chunk * 8]
        out[sel] = _statevector_probabilities(angles[sel], config)
    for start in range(0, idx_noisy.size, chunk):
        sel = idx_noisy[start : start + chunk]
        out[sel] = _density_probabilities(angles[sel], config, family, p[sel])
    if np.any(flip > 0):
        out = readout_flip_batch(out, flip, config.num_qubits)
    out = np.clip(out, 0.0, None)
    return out / out.sum(axis=1, keepdims=True)


def model_probabilities(xs, encoder: AngleEncoder, config: AnsatzConfig, **noise) -> np.ndarray:
    return circuit_probabilities(encoder.forward(xs), config, **noise)


def schedule_probabilities(xs, times, encoder, config, schedule: NoiseSchedule) -> np.ndarray:
    """One outcome distribution per (x, t) pair under a noise schedule."""
    p = schedule.gate_parameter(times) if schedule.applies_after_each_gate else np.zeros(len(xs))
    return circuit_probabilities(
        encoder.forward(xs),
        config,
        family=schedule.family,
        gate_param=p,
        readout_flip=schedule.readout_parameter(times),
    )


# ---------------------------------------------------------------------------
# Model file


@dataclass
class TrainedModel:
    encoder: AngleEncoder
    config: AnsatzConfig
    grid: GridMap
    metadata: dict = field(default_factory=dict)


def save_model(path, model: TrainedModel) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": list(model.encoder.layer_sizes),
        "weights": [w.tolist() for w in model.encoder.weights],
        "biases": [b.tolist() for b in model.encoder.biases],
        "ansatz": {
            "num_qubits": model.config.num_qubits,
            "num_layers": model.config.num_layers,
            "entangler": model.config.entangler,
        },
        "grid": {"y_min": model.grid.y_min, "y_max": model.grid.y_max},
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def load_model(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported model format_version {version!r}")
    encoder = AngleEncoder(doc["weights"], doc["biases"])
    if list(encoder.layer_sizes) != list(doc["layer_sizes"]):
        raise ConfigurationError("layer_sizes disagree with stored weights")
    config = AnsatzConfig(**doc["ansatz"])
    if encoder.output_size != config.num_parameters:
        raise ConfigurationError("encoder output size does not match the ansatz")
    grid = GridMap(config.num_qubits, **doc["grid"])
    return TrainedModel(encoder, config, grid, doc.get("metadata", {}))
