"""Planar floating-base dynamics of a torso carrying a two-link supernumerary leg.

Generalized coordinates are ``q = [x, z, pitch, hip, knee]``.  The torso is a
planar rigid body whose centre of mass sits at ``(x, z)``; the leg hangs from a
torso-fixed hinge ``attachment_offset`` metres below that point.  Absolute
link angles are measured from the downward vertical and grow when the foot
swings forward (+x):

    thigh angle = pitch + hip
    shank angle = pitch + hip - knee      (knee flexion folds the shank back)

Two evaluation paths exist.  :func:`eval_terms` builds the full block
partitioned M, C, G from body Jacobians (Christoffel construction for C) and
is the reference used by the controller and the verification suite.
:func:`srl_kernel` is a scalar closed-form version of the SRL rows only,
fused with the foot contact law, used inside the integrator where per-call
overhead matters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidStateError, ModelConfigError

NB = 3  # floating-base coordinates
NS = 2  # SRL joints

_S_PITCH = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
_S_THIGH = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
_S_SHANK = np.array([0.0, 0.0, 1.0, 1.0, -1.0])


@dataclass(frozen=True)
class ModelParams:
    """Geometric and inertial constants.

    The defaults are stand-ins for a wearable leg of roughly human-thigh scale.
    Degenerate values (zero mass, zero length) are accepted so that limiting
    cases can be analysed; call :meth:`validate` before simulating.
    """

    torso_mass: float = 40.0
    torso_inertia: float = 1.6
    link_masses: tuple[float, float] = (2.0, 1.5)
    link_lengths: tuple[float, float] = (0.45, 0.45)
    link_com_offsets: tuple[float, float] = (0.225, 0.225)
    link_inertias: tuple[float, float] = (2.0 * 0.45**2 / 12.0, 1.5 * 0.45**2 / 12.0)
    attachment_offset: float = 0.25
    gravity: float = 9.81
    # reflected actuator inertia (rotor inertia times gear ratio squared) per joint
    joint_armature: tuple[float, float] = (0.3, 0.3)

    def validate(self) -> "ModelParams":
        scalars = {
            "torso_mass": self.torso_mass,
            "torso_inertia": self.torso_inertia,
            "gravity": self.gravity,
        }
        for i in range(2):
            scalars[f"link_masses[{i}]"] = self.link_masses[i]
            scalars[f"link_lengths[{i}]"] = self.link_lengths[i]
            scalars[f"link_com_offsets[{i}]"] = self.link_com_offsets[i]
            scalars[f"link_inertias[{i}]"] = self.link_inertias[i]
        for name, value in scalars.items():
            if not math.isfinite(value) or value <= 0.0:
                raise ModelConfigError(f"{name} must be finite and > 0, got {value!r}")
        if not math.isfinite(self.attachment_offset) or self.attachment_offset < 0.0:
            raise ModelConfigError("attachment_offset must be finite and >= 0")
        for i, value in enumerate(self.joint_armature):
            if not math.isfinite(value) or value < 0.0:
                raise ModelConfigError(f"joint_armature[{i}] must be finite and >= 0, got {value!r}")
        return self

    def as_tuple(self) -> tuple[float, ...]:
        """Flat constants in the order :func:`kernel_constants` expects."""
        return (
            float(self.link_masses[0]),
            float(self.link_masses[1]),
            float(self.link_lengths[0]),
            float(self.link_lengths[1]),
            float(self.link_com_offsets[0]),
            float(self.link_com_offsets[1]),
            float(self.link_inertias[0]),
            float(self.link_inertias[1]),
            float(self.attachment_offset),
            float(self.gravity),
            float(self.joint_armature[0]),
            float(self.joint_armature[1]),
        )


def _vec(values, n, name):
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise InvalidStateError(f"{name} must have {n} entries, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GeneralizedState:
    """Positions and velocities of the floating base (x, z, pitch) and SRL (hip, knee)."""

    q_b: np.ndarray
    q_s: np.ndarray
    dq_b: np.ndarray = field(default_factory=lambda: np.zeros(NB))
    dq_s: np.ndarray = field(default_factory=lambda: np.zeros(NS))

    def __post_init__(self):
        object.__setattr__(self, "q_b", _vec(self.q_b, NB, "q_b"))
        object.__setattr__(self, "q_s", _vec(self.q_s, NS, "q_s"))
        object.__setattr__(self, "dq_b", _vec(self.dq_b, NB, "dq_b"))
        object.__setattr__(self, "dq_s", _vec(self.dq_s, NS, "dq_s"))

    @classmethod
    def from_vectors(cls, q, dq) -> "GeneralizedState":
        q = _vec(q, NB + NS, "q")
        dq = _vec(dq, NB + NS, "dq")
        return cls(q[:NB], q[NB:], dq[:NB], dq[NB:])

    @property
    def q(self) -> np.ndarray:
        return np.concatenate([self.q_b, self.q_s])

    @property
    def dq(self) -> np.ndarray:
        return np.concatenate([self.dq_b, self.dq_s])

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.q_b))
            and np.all(np.isfinite(self.q_s))
            and np.all(np.isfinite(self.dq_b))
            and np.all(np.isfinite(self.dq_s))
        )


@dataclass(frozen=True)
class ExternalForces:
    """Ground reaction at the SRL foot (world frame, [tangential, normal]) and joint disturbance."""

    F_s: np.ndarray = field(default_factory=lambda: np.zeros(2))
    tau_d: np.ndarray = field(default_factory=lambda: np.zeros(NS))

    def __post_init__(self):
        object.__setattr__(self, "F_s", _vec(self.F_s, 2, "F_s"))
        object.__setattr__(self, "tau_d", _vec(self.tau_d, NS, "tau_d"))
        if not (np.all(np.isfinite(self.F_s)) and np.all(np.isfinite(self.tau_d))):
            raise InvalidStateError("external forces must be finite")


@dataclass(frozen=True)
class DynamicsTerms:
    M_bb: np.ndarray
    M_bs: np.ndarray
    M_ss: np.ndarray
    C_bb: np.ndarray
    C_bs: np.ndarray
    C_sb: np.ndarray
    C_ss: np.ndarray
    G_b: np.ndarray
    G_s: np.ndarray
    J_s: np.ndarray
    dM: np.ndarray  # dM[k] = dM/dq_k, kept for verification

    @property
    def M(self) -> np.ndarray:
        return np.block([[self.M_bb, self.M_bs], [self.M_bs.T, self.M_ss]])

    @property
    def C(self) -> np.ndarray:
        return np.block([[self.C_bb, self.C_bs], [self.C_sb, self.C_ss]])

    @property
    def G(self) -> np.ndarray:
        return np.concatenate([self.G_b, self.G_s])


def _check(state: GeneralizedState):
    if not state.is_finite():
        raise InvalidStateError("state contains non-finite entries")


def _u(beta):
    return np.array([math.sin(beta), -math.cos(beta)])


def _du(beta):
    return np.array([math.cos(beta), math.sin(beta)])


def _bodies(params: ModelParams):
    """(mass, rotational inertia, [(arm length, angle selector)], body angle selector)."""
    l1, _ = params.link_lengths
    r1, r2 = params.link_com_offsets
    d = params.attachment_offset
    return (
        (params.torso_mass, params.torso_inertia, (), _S_PITCH),
        (params.link_masses[0], params.link_inertias[0], ((d, _S_PITCH), (r1, _S_THIGH)), _S_THIGH),
        (
            params.link_masses[1],
            params.link_inertias[1],
            ((d, _S_PITCH), (l1, _S_THIGH), (r2, _S_SHANK)),
            _S_SHANK,
        ),
    )


def _foot_chain(params: ModelParams):
    l1, l2 = params.link_lengths
    d = params.attachment_offset
    return ((d, _S_PITCH), (l1, _S_THIGH), (l2, _S_SHANK))


def _point_jacobian(chain, q):
    """Jacobian (2 x 5) of a chain point and its derivative dJ[k] = dJ/dq_k."""
    J = np.zeros((2, NB + NS))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    dJ = np.zeros((NB + NS, 2, NB + NS))
    for a, S in chain:
        beta = float(S @ q)
        J += a * np.outer(_du(beta), S)
        dJ -= a * np.einsum("k,i,j->kij", S, _u(beta), S)
    return J, dJ


def _point_position(chain, q):
    p = np.array([q[0], q[1]], dtype=float)
    for a, S in chain:
        p = p + a * _u(float(S @ q))
    return p


_BASE_J = np.zeros((2, NB + NS))
_BASE_J[0, 0] = _BASE_J[1, 1] = 1.0


@lru_cache(maxsize=32)
def _body_arrays(params: ModelParams):
    """Per body: (mass, inertia, arm lengths (L,), selectors (L, 5), body selector)."""
    out = []
    for mass, inertia, chain, S_body in _bodies(params):
        arms = np.array([a for a, _ in chain], dtype=float)
        sel = np.array([S for _, S in chain], dtype=float).reshape(-1, NB + NS)
        out.append((mass, inertia, arms, sel, S_body))
    return tuple(out)


def eval_terms(params: ModelParams, state: GeneralizedState) -> DynamicsTerms:
    _check(state)
    q, dq = state.q, state.dq
    n = NB + NS
    M = np.zeros((n, n))
    dM = np.zeros((n, n, n))
    G = np.zeros(n)
    for mass, inertia, arms, sel, S_body in _body_arrays(params):
        J = _BASE_J.copy()
        if arms.size:
            beta = sel @ q
            sb, cb = np.sin(beta), np.cos(beta)
            # J = E + sum_l a_l du_l S_l^T;  dJ[k] = -sum_l a_l S_l[k] u_l S_l^T
            J += np.vstack([arms * cb, arms * sb]) @ sel
            u = np.vstack([sb, -cb])
            dJ = -np.einsum("l,lk,il,lj->kij", arms, sel, u, sel)
            JtdJ = np.einsum("ai,kaj->kij", J, dJ)
            dM += mass * (JtdJ + JtdJ.transpose(0, 2, 1))
        M += mass * (J.T @ J) + inertia * np.outer(S_body, S_body)
        G += mass * params.gravity * J[1]
    M[NB:, NB:] += np.diag(np.asarray(params.joint_armature, dtype=float))
    # Christoffel symbols of the first kind; makes dM/dt - 2C skew-symmetric
    dMq = np.einsum("kij,k->ij", dM, dq)
    C = 0.5 * (dMq + np.einsum("jik,k->ij", dM, dq) - np.einsum("ijk,k->ij", dM, dq))
    Jf, _ = _point_jacobian(_foot_chain(params), q)
    return DynamicsTerms(
        M_bb=M[:NB, :NB].copy(),
        M_bs=M[:NB, NB:].copy(),
        M_ss=M[NB:, NB:].copy(),
        C_bb=C[:NB, :NB].copy(),
        C_bs=C[:NB, NB:].copy(),
        C_sb=C[NB:, :NB].copy(),
        C_ss=C[NB:, NB:].copy(),
        G_b=G[:NB].copy(),
        G_s=G[NB:].copy(),
        J_s=Jf[:, NB:].copy(),
        dM=dM,
    )


def contact_jacobian(params: ModelParams, state: GeneralizedState) -> np.ndarray:
    """d(foot position)/d(q_s): maps SRL joint velocities to foot velocity in the sagittal plane."""
    _check(state)
    J, _ = _point_jacobian(_foot_chain(params), state.q)
    return J[:, NB:].copy()


def foot_position(params: ModelParams, state: GeneralizedState) -> np.ndarray:
    _check(state)
    return _point_position(_foot_chain(params), state.q)


def foot_velocity(params: ModelParams, state: GeneralizedState) -> np.ndarray:
    _check(state)
    J, _ = _point_jacobian(_foot_chain(params), state.q)
    return J @ state.dq


def forward_dynamics(
    params: ModelParams,
    state: GeneralizedState,
    tau_s,
    torso_accel_cmd,
    ext: ExternalForces | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """SRL accelerations under a prescribed torso acceleration.

    Solves ``M_ss dds = tau + J^T F + tau_d - C_ss ds - G_s - M_bs^T ddb - C_sb db``
    and echoes ``ddb`` back unchanged.
    """
    ext = ext or ExternalForces()
    tau_s = _vec(tau_s, NS, "tau_s")
    ddq_b = _vec(torso_accel_cmd, NB, "torso_accel_cmd")
    terms = eval_terms(params, state)
    rhs = (
        tau_s
        + terms.J_s.T @ ext.F_s
        + ext.tau_d
        - terms.C_ss @ state.dq_s
        - terms.G_s
        - terms.M_bs.T @ ddq_b
        - terms.C_sb @ state.dq_b
    )
    try:
        if np.linalg.cond(terms.M_ss) > 1e12:
            raise np.linalg.LinAlgError
        ddq_s = np.linalg.solve(terms.M_ss, rhs)
    except np.linalg.LinAlgError:
        raise ModelConfigError("SRL mass matrix M_ss is singular; check link masses/inertias") from None
    return ddq_b.copy(), ddq_s


def _body_point_velocities(params: ModelParams, state: GeneralizedState):
    q, dq = state.q, state.dq
    out = []
    for mass, inertia, chain, S_body in _bodies(params):
        v = np.array([dq[0], dq[1]], dtype=float)
        for a, S in chain:
            v = v + a * _du(float(S @ q)) * float(S @ dq)
        out.append((mass, inertia, v, float(S_body @ dq), _point_position(chain, q)))
    return out


def kinetic_energy(params: ModelParams, state: GeneralizedState) -> float:
    """Kinetic energy from body velocities (independent of the assembled mass matrix)."""
    _check(state)
    rotors = 0.5 * float(np.dot(params.joint_armature, state.dq_s**2))
    return rotors + sum(
        0.5 * m * float(v @ v) + 0.5 * inertia * omega**2
        for m, inertia, v, omega, _ in _body_point_velocities(params, state)
    )


def potential_energy(params: ModelParams, state: GeneralizedState) -> float:
    _check(state)
    return sum(m * params.gravity * p[1] for m, _, _, _, p in _body_point_velocities(params, state))


def total_energy(params: ModelParams, state: GeneralizedState) -> float:
    return kinetic_energy(params, state) + potential_energy(params, state)


@lru_cache(maxsize=32)
def kernel_constants(c: tuple[float, ...]) -> tuple[float, ...]:
    """Configuration-independent products used by :func:`srl_kernel`."""
    m1, m2, l1, l2, r1, r2, i1, i2, _, _, ia1, ia2 = c
    D = m2 * r2 * r2 + i2
    A0 = m1 * r1 * r1 + i1 + m2 * (l1 * l1 + r2 * r2) + i2 + ia1
    return (A0, m2 * l1 * r2, D, D + ia2, m1 * r1 + m2 * l1, m2 * r2, l1, l2, ia1)


def torso_terms(c: tuple[float, ...], qb, dqb, ddqb) -> tuple:
    """Torso-only quantities the kernel needs; works on scalars or on (n, 3) rows.

    Returns (pitch, pitch rate, pitch accel, hinge accel x, hinge accel z + g,
    hinge z, hinge vx, hinge vz).
    """
    d, g = c[8], c[9]
    qb, dqb, ddqb = (np.asarray(v, dtype=float) for v in (qb, dqb, ddqb))
    z, ph = qb[..., 1], qb[..., 2]
    dx, dz, dph = dqb[..., 0], dqb[..., 1], dqb[..., 2]
    ax, az, aph = ddqb[..., 0], ddqb[..., 1], ddqb[..., 2]
    s0, c0 = np.sin(ph), np.cos(ph)
    dd0 = d * dph * dph
    return (
        ph,
        dph,
        aph,
        ax + d * c0 * aph - dd0 * s0,
        az + d * s0 * aph + dd0 * c0 + g,
        z - d * c0,
        dx + d * dph * c0,
        dz + d * dph * s0,
    )


def srl_kernel(
    k: tuple[float, ...],
    ground: tuple[float, ...],
    tt: tuple[float, ...],
    q1: float,
    q2: float,
    dq1: float,
    dq2: float,
    tau1: float,
    tau2: float,
    fx: float = 0.0,
    fz: float = 0.0,
) -> tuple[float, float, float, float, float]:
    """Foot contact plus the closed-form SRL rows, in one scalar pass.

    ``k`` comes from :func:`kernel_constants`, ``tt`` is one row of
    :func:`torso_terms` and ``ground`` is (stiffness, damping, height,
    friction, belt speed, slip scale).  ``fx``, ``fz`` are extra foot forces
    added to the contact law's.  Returns (dd hip, dd knee, fx, fz, foot z).
    """
    A0, P, D, m22, S1, T, l1, l2, ia1 = k
    ph, dph, aph, a0x, a0z, hz, hvx, hvz = tt
    b1 = ph + q1
    b2 = b1 - q2
    w1 = dph + dq1
    w2 = w1 - dq2
    s1, c1 = math.sin(b1), math.cos(b1)
    s2, c2 = math.sin(b2), math.cos(b2)

    pz = hz - l1 * c1 - l2 * c2
    pen = ground[2] - pz
    if pen > 0.0:
        vz = hvz + l1 * w1 * s1 + l2 * w2 * s2
        f = ground[0] * pen - ground[1] * vz
        if f > 0.0:
            fz += f
            if ground[3]:
                vx = hvx + l1 * w1 * c1 + l2 * w2 * c2
                fx -= ground[3] * f * math.tanh((vx - ground[4]) / ground[5])

    # relative knee geometry from the absolute link angles
    cq = c1 * c2 + s1 * s2
    sq = s1 * c2 - c1 * s2
    Pc = P * cq
    m11 = A0 + 2.0 * Pc
    m12 = -(Pc + D)
    fe1 = fx * c1 + fz * s1
    fe2 = fx * c2 + fz * s2
    a0e1 = a0x * c1 + a0z * s1
    a0e2 = a0x * c2 + a0z * s2
    w1s = w1 * w1
    rhs1 = tau1 + l1 * fe1 + l2 * fe2 - S1 * a0e1 - T * a0e2 - (m11 - ia1) * aph - P * sq * (w2 * w2 - w1s)
    rhs2 = tau2 - l2 * fe2 + T * a0e2 + (Pc + D) * aph - P * w1s * sq
    det = m11 * m22 - m12 * m12
    return (m22 * rhs1 - m12 * rhs2) / det, (m11 * rhs2 - m12 * rhs1) / det, fx, fz, pz


_NO_GROUND = (0.0, 0.0, -math.inf, 0.0, 0.0, 1.0)


def srl_acceleration(
    c: tuple[float, ...],
    qb,
    dqb,
    ddqb,
    q1: float,
    q2: float,
    dq1: float,
    dq2: float,
    tau1: float,
    tau2: float,
    fx: float,
    fz: float,
) -> tuple[float, float]:
    """SRL joint accelerations under a given foot force, without a ground model.

    ``c`` is :meth:`ModelParams.as_tuple`.  Returns (dd hip, dd knee).  Agrees
    with :func:`forward_dynamics` to rounding; the test-suite holds it to that.
    """
    tt = tuple(float(v) for v in torso_terms(c, qb, dqb, ddqb))
    a1, a2, _, _, _ = srl_kernel(kernel_constants(c), _NO_GROUND, tt, q1, q2, dq1, dq2, tau1, tau2, fx, fz)
    return a1, a2


def energy_series(params: ModelParams, qb: np.ndarray, dqb: np.ndarray, qs: np.ndarray, dqs: np.ndarray) -> np.ndarray:
    """Total energy along a trajectory; arrays are (n, 3) and (n, 2)."""
    x, z, ph = qb.T
    dx, dz, dph = dqb.T
    q1, q2 = qs.T
    dq1, dq2 = dqs.T
    m1, m2, l1, _, r1, r2, i1, i2, d, g, ia1, ia2 = params.as_tuple()
    b1 = ph + q1
    b2 = b1 - q2
    w1 = dph + dq1
    w2 = w1 - dq2
    hx, hz = x + d * np.sin(ph), z - d * np.cos(ph)
    hvx, hvz = dx + d * dph * np.cos(ph), dz + d * dph * np.sin(ph)
    c1z = hz - r1 * np.cos(b1)
    v1x, v1z = hvx + r1 * w1 * np.cos(b1), hvz + r1 * w1 * np.sin(b1)
    kz = hz - l1 * np.cos(b1)
    kvx, kvz = hvx + l1 * w1 * np.cos(b1), hvz + l1 * w1 * np.sin(b1)
    c2z = kz - r2 * np.cos(b2)
    v2x, v2z = kvx + r2 * w2 * np.cos(b2), kvz + r2 * w2 * np.sin(b2)
    kinetic = (
        0.5 * params.torso_mass * (dx**2 + dz**2)
        + 0.5 * params.torso_inertia * dph**2
        + 0.5 * m1 * (v1x**2 + v1z**2)
        + 0.5 * i1 * w1**2
        + 0.5 * m2 * (v2x**2 + v2z**2)
        + 0.5 * i2 * w2**2
        + 0.5 * ia1 * dq1**2
        + 0.5 * ia2 * dq2**2
    )
    potential = g * (params.torso_mass * z + m1 * c1z + m2 * c2z)
    return kinetic + potential
