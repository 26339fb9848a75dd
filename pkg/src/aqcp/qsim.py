"""Dense statevector and density-matrix simulation for few-qubit circuits.

Qubit 0 is the most significant bit of a basis-state index, so the amplitude
of ``|b_0 b_1 ... b_{Q-1}>`` lives at ``int("b_0 b_1 ... b_{Q-1}", 2)``.

All public operations are pure: inputs are never mutated.  The batched
kernels at the bottom of the module (``*_batch``) are what the model layer
uses for throughput; the object-level API is built on the same tensor
contractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "SimulationError",
    "ChannelError",
    "Gate",
    "StateVector",
    "DensityMatrix",
    "KrausChannel",
    "CHANNEL_FAMILIES",
    "gate_matrix",
    "rotation_matrix",
    "apply_gate",
    "apply_unitary_to_density",
    "apply_channel",
    "make_channel",
    "kraus_operators",
    "readout_povm",
    "measure_probabilities",
    "statevector_probabilities",
    "format_matrix",
]

GATE_KINDS = ("RX", "RY", "RZ", "CZ", "CX")
ONE_QUBIT_KINDS = ("RX", "RY", "RZ")
CHANNEL_FAMILIES = ("depolarising", "phase_flip", "amplitude_damping")

TRACE_TOL = 1e-10
HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-8
COMPLETENESS_TOL = 1e-12
POVM_TOL = 1e-10

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class SimulationError(ValueError):
    """Invalid argument to a simulator operation (bad target, shape, ...)."""


class ChannelError(ValueError):
    """A channel or POVM fails its normalisation condition."""


# ---------------------------------------------------------------------------
# Gates


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise SimulationError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.kind in ONE_QUBIT_KINDS:
            if len(self.targets) != 1:
                raise SimulationError(f"{self.kind} takes exactly one target")
            if self.angle is None:
                raise SimulationError(f"{self.kind} requires an angle")
        else:
            if len(self.targets) != 2 or self.targets[0] == self.targets[1]:
                raise SimulationError(f"{self.kind} takes two distinct targets")
            if self.angle is not None:
                raise SimulationError(f"{self.kind} takes no angle")
        if min(self.targets) < 0:
            raise SimulationError("negative qubit index")

    def check_targets(self, num_qubits: int) -> None:
        if max(self.targets) >= num_qubits:
            raise SimulationError(
                f"gate {self.kind} targets {self.targets} out of range for {num_qubits} qubits"
            )


def rotation_matrix(kind: str, angle) -> np.ndarray:
    """Rotation ``exp(-i angle P / 2)`` for P in {X, Y, Z}.

    ``angle`` may be an array, in which case the result has shape
    ``angle.shape + (2, 2)``.
    """
    a = np.asarray(angle, dtype=float)
    c = np.cos(a / 2)
    s = np.sin(a / 2)
    out = np.zeros(a.shape + (2, 2), dtype=complex)
    if kind == "RX":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
    elif kind == "RY":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
    elif kind == "RZ":
        out[..., 0, 0] = np.exp(-0.5j * a)
        out[..., 1, 1] = np.exp(0.5j * a)
    else:
        raise SimulationError(f"not a rotation: {kind!r}")
    return out


def gate_matrix(gate: Gate) -> np.ndarray:
    """The gate's unitary on its own targets (2x2 or 4x4, first target = MSB)."""
    if gate.kind in ONE_QUBIT_KINDS:
        return rotation_matrix(gate.kind, gate.angle)
    if gate.kind == "CZ":
        return np.diag([1, 1, 1, -1]).astype(complex)
    # CX: control = targets[0], target = targets[1]
    return np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    )


# ---------------------------------------------------------------------------
# States


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.num_qubits or self.num_qubits < 1:
            raise SimulationError(
                f"statevector of length {amps.shape[0]} does not match {self.num_qubits} qubits"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(2**num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps, num_qubits)

    @classmethod
    def basis(cls, bits: str) -> "StateVector":
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[int(bits, 2)] = 1.0
        return cls(amps, len(bits))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.num_qubits)


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray
    num_qubits: int

    def __post_init__(self):
        rho = np.array(self.entries, dtype=complex)
        d = 2**self.num_qubits
        if rho.shape != (d, d) or self.num_qubits < 1:
            raise SimulationError(
                f"density matrix of shape {rho.shape} does not match {self.num_qubits} qubits"
            )
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)

    @classmethod
    def zero(cls, num_qubits: int) -> "DensityMatrix":
        return StateVector.zero(num_qubits).to_density()

    @classmethod
    def maximally_mixed(cls, num_qubits: int) -> "DensityMatrix":
        d = 2**num_qubits
        return cls(np.eye(d, dtype=complex) / d, num_qubits)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.entries + self.entries.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    def validate(self, trace_tol: float = TRACE_TOL, psd_tol: float = PSD_TOL) -> None:
        """Raise ``SimulationError`` if any density-matrix invariant is violated."""
        rho = self.entries
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise SimulationError("density matrix is not Hermitian")
        if abs(self.trace() - 1.0) > trace_tol:
            raise SimulationError(f"trace {self.trace()} differs from 1")
        if self.min_eigenvalue() < -psd_tol:
            raise SimulationError("density matrix is not positive semidefinite")


def _apply_local(tensor: np.ndarray, op: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Contract ``op`` (2^k x 2^k) into the given qubit axes of ``tensor``."""
    k = len(axes)
    op_t = op.reshape((2,) * (2 * k))
    out = np.tensordot(op_t, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    # tensordot puts the new axes first; move them back into place
    return np.moveaxis(out, list(range(k)), list(axes))


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    gate.check_targets(state.num_qubits)
    q = state.num_qubits
    psi = state.amplitudes.reshape((2,) * q)
    out = _apply_local(psi, gate_matrix(gate), gate.targets)
    return StateVector(out.reshape(-1), q)


def _conjugate(rho: np.ndarray, op: np.ndarray, targets: Sequence[int], q: int) -> np.ndarray:
    """``op rho op^dagger`` with ``op`` acting on ``targets``."""
    t = rho.reshape((2,) * (2 * q))
    t = _apply_local(t, op, list(targets))
    t = _apply_local(t, op.conj(), [q + i for i in targets])
    return t.reshape(2**q, 2**q)


def apply_unitary_to_density(rho: DensityMatrix, gate: Gate) -> DensityMatrix:
    gate.check_targets(rho.num_qubits)
    out = _conjugate(rho.entries, gate_matrix(gate), gate.targets, rho.num_qubits)
    return DensityMatrix(out, rho.num_qubits)


# ---------------------------------------------------------------------------
# Channels


@dataclass(frozen=True)
class KrausChannel:
    operators: tuple[np.ndarray, ...]
    label: str = "custom"
    parameter: float | None = field(default=None, compare=False)

    def __post_init__(self):
        ops = tuple(np.array(e, dtype=complex) for e in self.operators)
        if not ops:
            raise ChannelError("channel needs at least one Kraus operator")
        shape = ops[0].shape
        if any(e.shape != shape for e in ops) or shape[0] != shape[1]:
            raise ChannelError("Kraus operators must be square and of equal shape")
        object.__setattr__(self, "operators", ops)

    @property
    def arity(self) -> int:
        return int(np.log2(self.operators[0].shape[0]))

    def completeness_error(self) -> float:
        total = sum(e.conj().T @ e for e in self.operators)
        return float(np.max(np.abs(total - np.eye(total.shape[0]))))


def _check_probability(family: str, p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise SimulationError(f"{family} parameter must lie in [0, 1], got {p!r}")
    return arr


def kraus_operators(family: str, p) -> np.ndarray:
    """Kraus operators as an array of shape ``p.shape + (K, 2, 2)``.

    Zero-weight operators are kept so the shape is fixed per family; use
    ``make_channel`` for the pruned single-channel form.
    """
    if family not in CHANNEL_FAMILIES:
        raise SimulationError(f"unknown channel family {family!r}")
    p = _check_probability(family, p)
    scal = p[..., None, None]
    if family == "depolarising":
        # rho -> (1 - p) rho + p I/2
        ops = [
            np.sqrt(1 - 0.75 * scal) * _I2,
            np.sqrt(0.25 * scal) * _X,
            np.sqrt(0.25 * scal) * _Y,
            np.sqrt(0.25 * scal) * _Z,
        ]
    elif family == "phase_flip":
        ops = [np.sqrt(1 - scal) * _I2, np.sqrt(scal) * _Z]
    else:
        e0 = np.zeros(p.shape + (2, 2), dtype=complex)
        e0[..., 0, 0] = 1.0
        e0[..., 1, 1] = np.sqrt(1 - p)
        e1 = np.zeros(p.shape + (2, 2), dtype=complex)
        e1[..., 0, 1] = np.sqrt(p)
        ops = [e0, e1]
    return np.stack(ops, axis=-3)


def make_channel(family: str, parameter: float) -> KrausChannel:
    ops = kraus_operators(family, float(parameter))
    kept = tuple(e for e in ops if np.max(np.abs(e)) > 0.0)
    channel = KrausChannel(kept, label=family, parameter=float(parameter))
    err = channel.completeness_error()
    if err > COMPLETENESS_TOL:
        raise ChannelError(f"{family}({parameter}) completeness error {err:.3e}")
    return channel


def apply_channel(rho: DensityMatrix, channel: KrausChannel, target_qubit: int) -> DensityMatrix:
    err = channel.completeness_error()
    if err > COMPLETENESS_TOL:
        raise ChannelError(f"channel {channel.label!r} is not trace preserving (error {err:.3e})")
    if channel.arity != 1:
        raise SimulationError("only single-qubit channels are supported")
    if not 0 <= target_qubit < rho.num_qubits:
        raise SimulationError(f"target qubit {target_qubit} out of range")
    out = sum(_conjugate(rho.entries, e, [target_qubit], rho.num_qubits) for e in channel.operators)
    return DensityMatrix(out, rho.num_qubits)


# ---------------------------------------------------------------------------
# Measurement


def readout_povm(flip_prob: float, num_qubits: int) -> list[np.ndarray]:
    """Diagonal POVM for independent symmetric bit flips at readout."""
    q = float(_check_probability("readout", flip_prob))
    single = [np.diag([1 - q, q]), np.diag([q, 1 - q])]
    effects = []
    for j in range(2**num_qubits):
        bits = format(j, f"0{num_qubits}b")
        eff = np.ones((1, 1))
        for b in bits:
            eff = np.kron(eff, single[int(b)])
        effects.append(eff.astype(complex))
    return effects


def measure_probabilities(rho: DensityMatrix, povm: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Born-rule outcome probabilities ``Tr(rho Pi_j)`` over the 2^Q bitstrings."""
    d = 2**rho.num_qubits
    if povm is None:
        probs = np.real(np.diag(rho.entries)).copy()
    else:
        effects = [np.asarray(e, dtype=complex) for e in povm]
        if len(effects) != d or any(e.shape != (d, d) for e in effects):
            raise ChannelError(f"POVM must have {d} effects of shape ({d}, {d})")
        if np.max(np.abs(sum(effects) - np.eye(d))) > POVM_TOL:
            raise ChannelError("POVM effects do not sum to the identity")
        for e in effects:
            if np.max(np.abs(e - e.conj().T)) > POVM_TOL or np.linalg.eigvalsh(e)[0] < -POVM_TOL:
                raise ChannelError("POVM effect is not positive semidefinite")
        probs = np.array([np.real(np.trace(rho.entries @ e)) for e in effects])
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def statevector_probabilities(state: StateVector) -> np.ndarray:
    return state.probabilities()


def format_matrix(matrix: np.ndarray, precision: int = 6) -> str:
    """Row-major plain-text dump, one row per line, entries as ``re+imi``."""
    rows = []
    for row in np.atleast_2d(matrix):
        rows.append(" ".join(f"{z.real:.{precision}g}{z.imag:+.{precision}g}i" for z in row))
    return "\n".join(rows)


# ---------------------------------------------------------------------------
# Batched kernels
#
# States carry a leading batch axis: statevectors are (B, 2, ..., 2) and
# density matrices (B, 2, ..., 2, 2, ..., 2) with Q row axes then Q column
# axes.  Single-qubit operators are (B, 2, 2) or (2, 2).


def apply_1q_batch(psi: np.ndarray, op: np.ndarray, qubit: int) -> np.ndarray:
    """Apply per-sample single-qubit operators to a batch of statevectors."""
    axis = 1 + qubit
    moved = np.moveaxis(psi, axis, -1)
    if op.ndim == 2:
        out = moved @ op.T
    else:
        shape = moved.shape
        flat = moved.reshape(shape[0], -1, 2)
        out = np.matmul(flat, np.swapaxes(op, -1, -2)).reshape(shape)
    return np.moveaxis(out, -1, axis)


def superoperator(op: np.ndarray) -> np.ndarray:
    """Row-major superoperator ``S`` with ``vec(A rho A^dagger) = S vec(rho)``.

    Works on stacks: ``op`` of shape (..., 2, 2) gives (..., 4, 4).
    """
    return np.einsum("...ik,...jl->...ijkl", op, op.conj()).reshape(op.shape[:-2] + (4, 4))


def channel_superoperator(kraus: np.ndarray) -> np.ndarray:
    """Sum of Kraus superoperators; ``kraus`` has shape (..., K, 2, 2)."""
    return superoperator(kraus).sum(axis=-3)


def apply_superop_batch(rho: np.ndarray, sop: np.ndarray, qubit: int, num_qubits: int) -> np.ndarray:
    """Apply per-sample (B, 4, 4) or shared (4, 4) superoperators to one qubit."""
    axes = [1 + qubit, 1 + qubit + num_qubits]
    moved = np.moveaxis(rho, axes, [-2, -1])
    shape = moved.shape
    flat = moved.reshape(shape[0], -1, 4)
    out = flat @ np.swapaxes(sop, -1, -2)
    return np.moveaxis(out.reshape(shape), [-2, -1], axes)


def diagonal_phase(num_qubits: int, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Diagonal of a product of CZ gates as a length-2^Q sign vector."""
    idx = np.arange(2**num_qubits)
    bits = (idx[:, None] >> (num_qubits - 1 - np.arange(num_qubits))) & 1
    sign = np.ones(2**num_qubits)
    for a, b in pairs:
        sign = sign * np.where(bits[:, a] & bits[:, b], -1.0, 1.0)
    return sign


def readout_flip_batch(probs: np.ndarray, flip: np.ndarray, num_qubits: int) -> np.ndarray:
    """Push (B, 2^Q) outcome probabilities through independent bit flips.

    Equivalent to ``Tr(rho Pi_j)`` with the diagonal flip POVM.
    """
    flip = np.broadcast_to(np.asarray(flip, dtype=float), probs.shape[:1])
    t = probs.reshape((probs.shape[0],) + (2,) * num_qubits)
    mats = np.empty((probs.shape[0], 2, 2))
    mats[:, 0, 0] = mats[:, 1, 1] = 1 - flip
    mats[:, 0, 1] = mats[:, 1, 0] = flip
    for q in range(num_qubits):
        t = apply_1q_batch(t, mats, q)
    return t.reshape(probs.shape)
