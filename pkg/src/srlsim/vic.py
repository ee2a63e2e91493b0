"""Variable impedance scheduling with a stability gate.

Each control cycle the current gait phase picks a target level (stance: high,
otherwise low).  The commanded value moves toward it along a logistic curve of
the number of cycles since the target last changed, and every candidate is
checked against three scalar inequalities on the hip axis before it may be
used.  A rejected candidate is replaced by the previously accepted one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .classifier import PhaseClassifier, classify
from .contact import GaitPhase
from .controller import ImpedanceParams
from .errors import GateConfigError

SIGMOID_A = 0.25
SIGMOID_B = 20.0
MAX_CYCLE_COUNT = 10_000  # s(x) == 1.0 exactly well before this


class ImpedanceLevel(NamedTuple):
    B: float
    K: float


LOW_DEFAULT = ImpedanceLevel(30.0, 40.0)
HIGH_DEFAULT = ImpedanceLevel(40.0, 400.0)


def smooth_gain(cycles_since_switch: float, a: float = SIGMOID_A, b: float = SIGMOID_B) -> float:
    if cycles_since_switch < 0:
        raise ValueError("cycles_since_switch must be >= 0")
    z = -a * (cycles_since_switch - b)
    if z > 700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(z))


def impedance_delta(s: float, high: ImpedanceLevel, low: ImpedanceLevel) -> ImpedanceLevel:
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    return ImpedanceLevel(s * (high.B - low.B), s * (high.K - low.K))


@dataclass(frozen=True)
class GateConfig:
    alpha: float
    env_stiffness: float = 0.0
    dt_control: float = 0.01

    def validate(self) -> "GateConfig":
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise GateConfigError("gate alpha must be > 0")
        if not (math.isfinite(self.env_stiffness) and self.env_stiffness >= 0):
            raise GateConfigError("gate env_stiffness must be >= 0")
        if not (math.isfinite(self.dt_control) and self.dt_control > 0):
            raise GateConfigError("gate dt_control must be > 0")
        return self

    @classmethod
    def default_for(cls, B0: float, M: float, dt_control: float = 0.01, env_stiffness: float = 0.0):
        """alpha = B0 / (2 M): half the bound that ``B - alpha M > 0`` allows at the baseline."""
        return cls(alpha=0.5 * B0 / M, env_stiffness=env_stiffness, dt_control=dt_control)


@dataclass(frozen=True)
class GateVerdict:
    accepted: bool
    margins: tuple[float, float, float]
    violated: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return "ok" if self.accepted else "reject:" + "+".join(self.violated)


def gate_margins(M, B, K, dB, dK, alpha, Ke) -> tuple[float, float, float]:
    return (
        alpha * B + K - alpha * alpha * M + Ke,
        B - alpha * M,
        2.0 * alpha * K + 2.0 * alpha * Ke - alpha * dB - dK,
    )


def stability_gate(
    candidate: ImpedanceParams, previous: ImpedanceParams, gate: GateConfig
) -> tuple[ImpedanceParams, GateVerdict]:
    """Accept ``candidate`` only if all three inequalities hold, else keep ``previous``.

    Rates are finite differences against ``previous`` over one control period.
    """
    gate.validate()
    dB = (candidate.B - previous.B) / gate.dt_control
    dK = (candidate.K - previous.K) / gate.dt_control
    m = gate_margins(candidate.M, candidate.B, candidate.K, dB, dK, gate.alpha, gate.env_stiffness)
    violated = tuple(name for name, ok in zip(("i", "ii", "iii"), (m[0] >= 0, m[1] > 0, m[2] > 0)) if not ok)
    if violated:
        return previous, GateVerdict(False, m, violated)
    return replace(candidate, dB=dB, dK=dK), GateVerdict(True, m)


@dataclass(frozen=True)
class SchedulerState:
    last_accepted: ImpedanceParams
    high: ImpedanceLevel = HIGH_DEFAULT
    low: ImpedanceLevel = LOW_DEFAULT
    current_label: GaitPhase = GaitPhase.SWING
    target_high: bool = False
    cycles_since_switch: int = MAX_CYCLE_COUNT
    last_verdict: GateVerdict | None = None
    confidence: float = 1.0
    skips: int = 0

    def __post_init__(self):
        hi, lo = self.high, self.low
        if not (hi.B > lo.B > 0 and hi.K > lo.K > 0):
            raise GateConfigError("impedance levels need HI.B > LI.B > 0 and HI.K > LI.K > 0")

    @classmethod
    def initial(cls, M: float, high=HIGH_DEFAULT, low=LOW_DEFAULT, dBmax=math.inf, dKmax=math.inf):
        high, low = ImpedanceLevel(*high), ImpedanceLevel(*low)
        start = ImpedanceParams(M=M, B=low.B, K=low.K, B0=low.B, K0=low.K, dBmax=dBmax, dKmax=dKmax)
        return cls(last_accepted=start, high=high, low=low)


def default_rate_caps(high: ImpedanceLevel, low: ImpedanceLevel, dt_control: float, margin: float = 1.05):
    """Largest per-second change a nominal logistic ramp produces, with a small margin."""
    peak = SIGMOID_A / 4.0  # max slope of the logistic per cycle
    return margin * peak * (high.B - low.B) / dt_control, margin * peak * (high.K - low.K) / dt_control


def schedule_impedance(
    state: SchedulerState,
    clf: PhaseClassifier | None,
    features,
    gate: GateConfig,
    phase: GaitPhase | None = None,
) -> tuple[ImpedanceParams, SchedulerState]:
    """One scheduler cycle.

    The phase comes from ``clf`` applied to ``features``, or from ``phase`` when
    given (ground-truth labels).  Stance targets the high level, swing and
    contact moment the low level.
    """
    if phase is None:
        if clf is None:
            raise GateConfigError("schedule_impedance needs a classifier or an explicit phase")
        phase, confidence = classify(clf, features)
    else:
        confidence = 1.0
    target_high = phase == GaitPhase.STANCE
    if target_high != state.target_high:
        cycles = 0
    else:
        cycles = min(state.cycles_since_switch + 1, MAX_CYCLE_COUNT)

    hi, lo = state.high, state.low
    delta = impedance_delta(smooth_gain(cycles), hi, lo)
    if target_high:
        B, K = lo.B + delta.B, lo.K + delta.K
    else:
        B, K = hi.B - delta.B, hi.K - delta.K

    prev = state.last_accepted
    candidate = prev.with_values(B, K)
    accepted, verdict = stability_gate(candidate, prev, gate)
    if verdict.accepted and (accepted.dB > prev.dBmax or accepted.dK > prev.dKmax):
        accepted, verdict = prev, GateVerdict(False, verdict.margins, ("rate",))
    if not verdict.accepted:
        accepted = replace(prev, dB=0.0, dK=0.0)
    new_state = replace(
        state,
        last_accepted=accepted,
        current_label=phase,
        target_high=target_high,
        cycles_since_switch=cycles,
        last_verdict=verdict,
        confidence=confidence,
        skips=state.skips + (0 if verdict.accepted else 1),
    )
    return accepted, new_state
