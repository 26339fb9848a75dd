"""Cross-entropy training of the angle encoder with parameter-shift gradients.

Circuit derivatives come from the two-term shift rule, which is exact for
rotation gates generated by a Pauli operator; encoder derivatives come from
manual backpropagation.  Training is noiseless.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import AngleEncoder, AnsatzConfig, GridMap, circuit_probabilities

__all__ = [
    "TrainingError",
    "PROB_CLAMP",
    "model_loss",
    "empirical_risk",
    "parameter_shift_gradient",
    "loss_and_gradient",
    "TrainConfig",
    "train",
]

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
SHIFT = np.pi / 2


class TrainingError(RuntimeError):
    pass


def _cell_probabilities(angles, cells, config):
    probs = circuit_probabilities(angles, config)
    return probs[np.arange(len(cells)), cells]


def model_loss(x: float, y: float, encoder: AngleEncoder, config: AnsatzConfig, grid: GridMap | None = None) -> float:
    """``-log P(Y_hat = cell(y) | x)`` under the noiseless circuit."""
    grid = grid or GridMap(config.num_qubits)
    cell = grid.nearest_index([y])
    p = _cell_probabilities(encoder.forward([x]), cell, config)[0]
    return float(-np.log(max(p, PROB_CLAMP)))


def empirical_risk(xs, ys, encoder, config, grid=None) -> float:
    grid = grid or GridMap(config.num_qubits)
    p = _cell_probabilities(encoder.forward(xs), grid.nearest_index(ys), config)
    return float(np.mean(-np.log(np.maximum(p, PROB_CLAMP))))


def parameter_shift_gradient(angles, cells, config: AnsatzConfig, chunk: int = 64):
    """Probabilities of ``cells`` and their derivatives w.r.t. every angle.

    Returns ``(p, dp)`` with ``dp[i, j] = (p(theta + s e_j) - p(theta - s e_j)) / 2``
    for ``s = pi/2``.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    cells = np.asarray(cells)
    n, P = angles.shape
    p = np.empty(n)
    dp = np.empty((n, P))
    shifts = np.concatenate([np.zeros((1, P)), SHIFT * np.eye(P), -SHIFT * np.eye(P)])
    for start in range(0, n, chunk):
        block = angles[start : start + chunk]
        m = block.shape[0]
        batch = (block[:, None, :] + shifts[None, :, :]).reshape(-1, P)
        probs = circuit_probabilities(batch, config).reshape(m, 2 * P + 1, -1)
        c = cells[start : start + chunk]
        pc = probs[np.arange(m), :, c]
        p[start : start + m] = pc[:, 0]
        dp[start : start + m] = 0.5 * (pc[:, 1 : P + 1] - pc[:, P + 1 :])
    return p, dp


def loss_and_gradient(xs, ys, encoder: AngleEncoder, config: AnsatzConfig, grid: GridMap | None = None):
    """Mean cross-entropy and its gradient w.r.t. encoder weights and biases."""
    grid = grid or GridMap(config.num_qubits)
    xs = np.asarray(xs, dtype=float)
    cells = grid.nearest_index(ys)
    angles = encoder.forward(xs)
    p, dp = parameter_shift_gradient(angles, cells, config)
    clamped = p < PROB_CLAMP
    losses = -np.log(np.maximum(p, PROB_CLAMP))
    # d(-log p)/dtheta; zero where the clamp is active
    dtheta = np.where(clamped[:, None], 0.0, -dp / np.maximum(p, PROB_CLAMP)[:, None]) / len(xs)
    gw, gb = encoder.backward(xs, dtheta)
    return float(losses.mean()), gw, gb


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.01
    optimizer: str = "gd"
    batch_size: int | None = 32
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8


@dataclass
class TrainResult:
    encoder: AngleEncoder
    loss_history: list[float] = field(default_factory=list)


def train(dataset, encoder: AngleEncoder, config: AnsatzConfig, train_config: TrainConfig | None = None, grid: GridMap | None = None, callback=None) -> TrainResult:
    """Minimise the empirical cross-entropy risk.

    ``loss_history[e]`` is the mean loss over epoch ``e`` (the full-batch risk
    before that epoch's update when ``batch_size`` is None).
    """
    tc = train_config or TrainConfig()
    if len(dataset) == 0:
        raise TrainingError("empty training set")
    if tc.optimizer not in ("gd", "adam"):
        raise TrainingError(f"unknown optimizer {tc.optimizer!r}")
    grid = grid or GridMap(config.num_qubits)
    data = np.asarray(dataset, dtype=float)
    xs_all, ys_all = data[:, 0], data[:, 1]
    rng = np.random.default_rng(tc.seed)
    enc = encoder.copy()
    params = [*enc.weights, *enc.biases]
    m1 = [np.zeros_like(a) for a in params]
    m2 = [np.zeros_like(a) for a in params]
    step = 0
    history = []
    n = len(xs_all)
    bs = n if tc.batch_size is None else int(tc.batch_size)
    for epoch in range(tc.epochs):
        order = np.arange(n) if tc.batch_size is None else rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            sel = order[start : start + bs]
            # divergence shows up as non-finite values and is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb = loss_and_gradient(xs_all[sel], ys_all[sel], enc, config, grid)
            grads = [*gw, *gb]
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(
                    f"non-finite loss/gradient at epoch {epoch} batch {start // bs}: loss={loss}"
                )
            total += loss * len(sel)
            step += 1
            for i, (a, g) in enumerate(zip(params, grads)):
                if tc.optimizer == "gd":
                    a -= tc.lr * g
                else:
                    b1, b2 = tc.adam_betas
                    m1[i] = b1 * m1[i] + (1 - b1) * g
                    m2[i] = b2 * m2[i] + (1 - b2) * g * g
                    mhat = m1[i] / (1 - b1**step)
                    vhat = m2[i] / (1 - b2**step)
                    a -= tc.lr * mhat / (np.sqrt(vhat) + tc.adam_eps)
        history.append(total / n)
        log.info("epoch %d loss %.6f", epoch + 1, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return TrainResult(enc, history)
