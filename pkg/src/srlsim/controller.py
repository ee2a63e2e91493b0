"""Hybrid position/force control of the SRL.

The hip runs a force-sensorless impedance law; the knee runs PID position
control with gravity feedforward.  Choosing the impedance inertia equal to the
hip entry of ``M_ss`` removes the force-feedback term, so no force sensor is
needed in the loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DynamicsTerms, GeneralizedState, ModelParams, eval_terms
from .errors import ControllerConfigError

HIP, KNEE = 0, 1


@dataclass(frozen=True)
class ImpedanceParams:
    """Hip impedance (M, B(t), K(t)) with the rates the stability gate needs.

    ``B0``/``K0`` are the nominal baseline; ``B - B0`` and ``K - K0`` are the
    variations that stand in for the unobservable environment disturbance.
    """

    M: float
    B: float
    K: float
    dB: float = 0.0
    dK: float = 0.0
    B0: float | None = None
    K0: float | None = None
    dBmax: float = math.inf
    dKmax: float = math.inf

    def __post_init__(self):
        if self.B0 is None:
            object.__setattr__(self, "B0", self.B)
        if self.K0 is None:
            object.__setattr__(self, "K0", self.K)

    @property
    def delta_B(self) -> float:
        return self.B - self.B0

    @property
    def delta_K(self) -> float:
        return self.K - self.K0

    def validate(self) -> "ImpedanceParams":
        for name in ("M", "B", "K"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ControllerConfigError(f"impedance {name} must be finite and > 0, got {v!r}")
        if not (math.isfinite(self.dB) and math.isfinite(self.dK)):
            raise ControllerConfigError("impedance rates must be finite")
        return self

    def with_values(self, B: float, K: float, dB: float = 0.0, dK: float = 0.0) -> "ImpedanceParams":
        return replace(self, B=B, K=K, dB=dB, dK=dK)


@dataclass(frozen=True)
class PidGains:
    kp: float = 300.0
    ki: float = 60.0
    kd: float = 10.0
    integral_limit: float = 10.0

    def validate(self) -> "PidGains":
        if min(self.kp, self.ki, self.kd) < 0:
            raise ControllerConfigError("PID gains must be >= 0")
        if not self.integral_limit > 0:
            raise ControllerConfigError("integral_limit must be > 0")
        return self


@dataclass(frozen=True)
class ControlCommand:
    tau_s: np.ndarray
    saturated: tuple[bool, bool]
    integral: float = 0.0  # knee PID integral state to feed into the next call


def nominal_impedance_inertia(params: ModelParams) -> float:
    """Largest hip entry of M_ss over the workspace (reached with the knee straight)."""
    state = GeneralizedState(np.zeros(3), np.zeros(2))
    return float(eval_terms(params, state).M_ss[HIP, HIP])


def force_feedback_coefficient(terms: DynamicsTerms, imp: ImpedanceParams) -> np.ndarray:
    """Coefficient of F_s in the sensor-based law: J_s^T (M_ss M^-1 - I) on the hip axis.

    With ``M`` equal to the hip entry of ``M_ss`` this is exactly zero.
    """
    ratio = terms.M_ss[HIP, HIP] / imp.M - 1.0
    coeff = np.zeros((1, 2))
    coeff[0] = ratio * terms.J_s[:, HIP]
    return coeff


def impedance_torque(
    terms: DynamicsTerms,
    ref,
    state: GeneralizedState,
    torso_accel,
    imp: ImpedanceParams,
    torso_feedback: bool = True,
) -> float:
    """Hip torque of the force-sensorless impedance law.

    ``ref`` is ``(q_d, dq_d, ddq_d)`` for both joints.  The variations
    ``B - B0`` and ``K - K0`` enter through the total ``B`` and ``K``.
    """
    imp.validate()
    q_d, dq_d, ddq_d = (np.asarray(r, dtype=float) for r in ref)
    ddq_b = np.asarray(torso_accel, dtype=float)
    tau = (
        terms.M_ss[HIP] @ ddq_d
        + imp.B * dq_d[HIP]
        + imp.K * q_d[HIP]
        + terms.C_ss[HIP] @ state.dq_s
        - imp.B * state.dq_s[HIP]
        - imp.K * state.q_s[HIP]
        + terms.G_s[HIP]
    )
    if torso_feedback:
        tau += terms.M_bs[:, HIP] @ ddq_b + terms.C_sb[HIP] @ state.dq_b
    return float(tau)


def approximate_disturbance(imp: ImpedanceParams, ref, state: GeneralizedState) -> float:
    """|dB (dq_d - dq_s) + dK (q_d - q_s)| on the hip axis."""
    q_d, dq_d = ref[0], ref[1]
    return abs(imp.delta_B * (dq_d[HIP] - state.dq_s[HIP]) + imp.delta_K * (q_d[HIP] - state.q_s[HIP]))


def pid_torque(
    ref_angle: float,
    ref_vel: float,
    state_angle: float,
    state_vel: float,
    gains: PidGains,
    dt: float,
    integral: float = 0.0,
) -> tuple[float, float]:
    """One PID update; returns ``(torque, new_integral)``.

    The integral is clamped so that ``ki * integral`` never exceeds
    ``gains.integral_limit`` in magnitude.
    """
    if not dt > 0:
        raise ControllerConfigError("dt must be > 0")
    e = ref_angle - state_angle
    de = ref_vel - state_vel
    integral = integral + e * dt
    if gains.ki > 0:
        cap = gains.integral_limit / gains.ki
        integral = min(max(integral, -cap), cap)
    return gains.kp * e + gains.ki * integral + gains.kd * de, integral


def hybrid_control(
    terms: DynamicsTerms,
    refs,
    state: GeneralizedState,
    torso_accel,
    imp: ImpedanceParams,
    gains: PidGains,
    dt: float,
    torque_limit: float,
    integral: float = 0.0,
    torso_feedback: bool = True,
) -> ControlCommand:
    if not torque_limit > 0:
        raise ControllerConfigError("torque_limit must be > 0")
    q_d, dq_d, _ = refs
    tau_hip = impedance_torque(terms, refs, state, torso_accel, imp, torso_feedback)
    tau_knee, integral = pid_torque(
        q_d[KNEE], dq_d[KNEE], state.q_s[KNEE], state.dq_s[KNEE], gains, dt, integral
    )
    tau_knee += terms.G_s[KNEE]
    raw = np.array([tau_hip, tau_knee])
    tau = np.clip(raw, -torque_limit, torque_limit)
    saturated = (bool(tau[0] != raw[0]), bool(tau[1] != raw[1]))
    return ControlCommand(tau_s=tau, saturated=saturated, integral=integral)


@dataclass(frozen=True)
class ConformanceReport:
    residual: np.ndarray
    max_abs: float
    rms: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rms < self.tolerance


def closed_loop_error_dynamics_check(record, params: ModelParams, tolerance: float = 1e-2) -> ConformanceReport:
    """Residual of the target impedance model along a recorded run.

    ``r = M_ss[hip] . (dds - ddd) + B (dq - dq_d) + K (q - q_d) - (J_s^T F_s)[hip]``
    using the B(t), K(t) stored in the record.  The inertia term uses the whole
    hip row of ``M_ss``, so knee acceleration errors are accounted for.  With an
    exact model and no disturbance the residual is at rounding level; an
    injected hip disturbance shows up in it one-for-one.
    """
    cols = record.columns
    n = len(record)
    r = np.empty(n)
    for i in range(n):
        state = GeneralizedState(
            [cols["x"][i], cols["z"][i], cols["pitch"][i]],
            [cols["q1"][i], cols["q2"][i]],
            [cols["dx"][i], cols["dz"][i], cols["dpitch"][i]],
            [cols["dq1"][i], cols["dq2"][i]],
        )
        terms = eval_terms(params, state)
        dde = np.array([cols["ddq1"][i] - cols["ddqd1"][i], cols["ddq2"][i] - cols["ddqd2"][i]])
        e = cols["q1"][i] - cols["qd1"][i]
        de = cols["dq1"][i] - cols["dqd1"][i]
        F = np.array([cols["grf_t"][i], cols["grf"][i]])
        r[i] = terms.M_ss[HIP] @ dde + cols["B"][i] * de + cols["K"][i] * e - terms.J_s[:, HIP] @ F
    return ConformanceReport(
        residual=r, max_abs=float(np.max(np.abs(r))), rms=float(np.sqrt(np.mean(r**2))), tolerance=tolerance
    )
