"""Time-dependent noise schedules and the noisy circuit runner.

A schedule maps a shot timestamp (seconds) to the parameter of one channel
family applied after every gate, plus a readout bit-flip probability.  The
schedule is evaluated once per shot; every gate in that shot sees the same
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .qsim import (
    CHANNEL_FAMILIES,
    DensityMatrix,
    Gate,
    SimulationError,
    apply_channel,
    apply_unitary_to_density,
    make_channel,
    measure_probabilities,
    readout_povm,
)

__all__ = [
    "Constant",
    "LinearDrift",
    "Sinusoid",
    "Burst",
    "NoiseSchedule",
    "parse_param_spec",
    "run_noisy_circuit",
    "noisy_probabilities",
]


@dataclass(frozen=True)
class Constant:
    p: float

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.p)

    def bounds(self) -> tuple[float, float]:
        return self.p, self.p


@dataclass(frozen=True)
class LinearDrift:
    """``p0`` at t <= 0 moving linearly to ``p1`` at ``t_end``, then held."""

    p0: float
    p1: float
    t_end: float

    def __post_init__(self):
        if self.t_end <= 0:
            raise SimulationError("linear_drift needs t_end > 0")

    def __call__(self, t):
        frac = np.clip(np.asarray(t, dtype=float) / self.t_end, 0.0, 1.0)
        return self.p0 + (self.p1 - self.p0) * frac

    def bounds(self) -> tuple[float, float]:
        return min(self.p0, self.p1), max(self.p0, self.p1)


@dataclass(frozen=True)
class Sinusoid:
    p_mean: float
    p_amp: float
    period: float

    def __post_init__(self):
        if self.period <= 0:
            raise SimulationError("sinusoid needs period > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.p_mean + self.p_amp * np.sin(2 * np.pi * t / self.period)

    def bounds(self) -> tuple[float, float]:
        a = abs(self.p_amp)
        return self.p_mean - a, self.p_mean + a


ParamSpec = Union[Constant, LinearDrift, Sinusoid, "Burst"]


@dataclass(frozen=True)
class Burst:
    """``p_burst`` inside ``[t_k, t_k + burst_width)`` for any burst time, else the base.

    The base may itself be any parameter spec, so bursts can ride on a drift.
    """

    base: ParamSpec
    p_burst: float
    burst_times: tuple[float, ...]
    burst_width: float

    def __post_init__(self):
        if not isinstance(self.base, (Constant, LinearDrift, Sinusoid, Burst)):
            object.__setattr__(self, "base", Constant(float(self.base)))
        object.__setattr__(self, "burst_times", tuple(float(b) for b in self.burst_times))
        if self.burst_width <= 0:
            raise SimulationError("burst_width must be positive")

    def inside(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        hit = np.zeros(t.shape, dtype=bool)
        for start in self.burst_times:
            hit |= (t >= start) & (t < start + self.burst_width)
        return hit

    def __call__(self, t):
        return np.where(self.inside(t), self.p_burst, self.base(t))

    def bounds(self) -> tuple[float, float]:
        lo, hi = self.base.bounds()
        return min(lo, self.p_burst), max(hi, self.p_burst)


def _spec_text(spec: ParamSpec) -> str:
    if isinstance(spec, Constant):
        return f"constant({spec.p!r})"
    if isinstance(spec, LinearDrift):
        return f"linear_drift({spec.p0!r},{spec.p1!r},{spec.t_end!r})"
    if isinstance(spec, Sinusoid):
        return f"sinusoid({spec.p_mean!r},{spec.p_amp!r},{spec.period!r})"
    times = ";".join(repr(b) for b in spec.burst_times)
    return f"burst({_spec_text(spec.base)},{spec.p_burst!r},[{times}],{spec.burst_width!r})"


def _split_args(body: str) -> list[str]:
    args, depth, cur = [], 0, ""
    for ch in body:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            args.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        args.append(cur.strip())
    return args


def parse_param_spec(text: str) -> ParamSpec:
    """Parse ``constant(p)``, ``linear_drift(p0,p1,t_end)``, ``sinusoid(m,a,period)``
    or ``burst(base,p_burst,[t1;t2],width)``; a bare number means constant."""
    text = text.strip()
    try:
        return Constant(float(text))
    except ValueError:
        pass
    if "(" not in text or not text.endswith(")"):
        raise ValueError(f"cannot parse parameter spec {text!r}")
    name, body = text.split("(", 1)
    args = _split_args(body[:-1])
    name = name.strip()
    try:
        if name == "constant":
            (p,) = args
            return Constant(float(p))
        if name == "linear_drift":
            p0, p1, t_end = args
            return LinearDrift(float(p0), float(p1), float(t_end))
        if name == "sinusoid":
            m, a, period = args
            return Sinusoid(float(m), float(a), float(period))
        if name == "burst":
            base, p_burst, times, width = args
            times = times.strip("[]")
            burst_times = tuple(float(v) for v in times.split(";") if v.strip())
            return Burst(parse_param_spec(base), float(p_burst), burst_times, float(width))
    except ValueError as exc:
        raise ValueError(f"bad arguments in parameter spec {text!r}: {exc}") from exc
    raise ValueError(f"unknown parameter spec {name!r}")


@dataclass(frozen=True)
class NoiseSchedule:
    family: str = "depolarising"
    gate_param: ParamSpec = field(default_factory=lambda: Constant(0.0))
    readout_flip: ParamSpec = field(default_factory=lambda: Constant(0.0))
    applies_after_each_gate: bool = True

    def __post_init__(self):
        if self.family not in CHANNEL_FAMILIES:
            raise SimulationError(f"unknown channel family {self.family!r}")
        for name in ("gate_param", "readout_flip"):
            spec = getattr(self, name)
            if not isinstance(spec, (Constant, LinearDrift, Sinusoid, Burst)):
                object.__setattr__(self, name, Constant(float(spec)))
            lo, hi = getattr(self, name).bounds()
            if lo < 0.0 or hi > 1.0:
                raise SimulationError(f"{name} leaves [0, 1] (range {lo}..{hi})")

    @classmethod
    def noiseless(cls) -> "NoiseSchedule":
        return cls()

    def gate_parameter(self, t):
        return np.asarray(self.gate_param(t), dtype=float)

    def readout_parameter(self, t):
        return np.asarray(self.readout_flip(t), dtype=float)

    @property
    def has_gate_noise(self) -> bool:
        if not self.applies_after_each_gate:
            return False
        return self.gate_param.bounds() != (0.0, 0.0)

    def describe(self) -> str:
        return (
            f"family={self.family} gate={_spec_text(self.gate_param)} "
            f"readout={_spec_text(self.readout_flip)} after_each_gate={self.applies_after_each_gate}"
        )


def run_noisy_circuit(
    circuit: Sequence[Gate], schedule: NoiseSchedule, t: float, num_qubits: int
) -> DensityMatrix:
    """Noisy output state of ``circuit`` for a shot stamped at time ``t``.

    Each gate is followed by the schedule's channel, evaluated at ``t``, on
    every qubit the gate touches.
    """
    rho = DensityMatrix.zero(num_qubits)
    p = float(schedule.gate_parameter(t))
    channel = make_channel(schedule.family, p) if schedule.applies_after_each_gate else None
    noisy = channel is not None and p > 0.0
    for gate in circuit:
        rho = apply_unitary_to_density(rho, gate)
        if noisy:
            for q in gate.targets:
                rho = apply_channel(rho, channel, q)
    return rho


def noisy_probabilities(
    circuit: Sequence[Gate], schedule: NoiseSchedule, t: float, num_qubits: int
) -> np.ndarray:
    """Outcome distribution of one shot at time ``t``, readout noise included."""
    rho = run_noisy_circuit(circuit, schedule, t, num_qubits)
    q = float(schedule.readout_parameter(t))
    povm = readout_povm(q, num_qubits) if q > 0 else None
    return measure_probabilities(rho, povm)

