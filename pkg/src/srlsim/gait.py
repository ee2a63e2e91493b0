"""Gait references: CLME calibration, mapping and periodic trajectory lookup.

The human leg state ``x_h = [angles, velocities]`` is mapped to an SRL
reference through a linear matrix ``C`` fitted by least squares on paired
samples.  Trajectories are single gait cycles replayed periodically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import CalibrationSingularError, GaitDataError

CSV_HEADER = ("t", "hip_h", "knee_h", "dhip_h", "dknee_h")
RIDGE_LAMBDA = 1e-8
UNIFORM_TOL = 1e-9


@dataclass(frozen=True)
class JointStateVector:
    angles: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(-1)
        v = np.asarray(self.velocities, dtype=float).reshape(-1)
        if a.shape != v.shape:
            raise ValueError("angles and velocities must have the same length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(v))):
            raise ValueError("joint state contains non-finite values")
        object.__setattr__(self, "angles", a)
        object.__setattr__(self, "velocities", v)

    @classmethod
    def from_stacked(cls, x) -> "JointStateVector":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size % 2:
            raise ValueError("stacked joint state must have even length")
        n = x.size // 2
        return cls(x[:n], x[n:])

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.angles, self.velocities])

    def __len__(self):
        return self.angles.size


@dataclass(frozen=True)
class MappingMatrix:
    C: np.ndarray
    residual_rms: float = 0.0
    ridge: bool = False


def _stack(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        X = np.asarray(samples, dtype=float)
    else:
        X = np.array([s.x if isinstance(s, JointStateVector) else np.asarray(s, float) for s in samples])
    if X.ndim != 2:
        raise ValueError("expected a sequence of joint state vectors")
    return X


def _dimension_names(dim: int) -> list[str]:
    n = dim // 2
    joints = ["hip", "knee"] if n == 2 else [f"joint{i}" for i in range(n)]
    return [f"{j} angle" for j in joints] + [f"{j} velocity" for j in joints]


def calibrate_clme(human, srl) -> MappingMatrix:
    """Least-squares fit of ``srl ~ C @ human`` over paired samples (normal equations)."""
    Xh = _stack(human)
    Xs = _stack(srl)
    if Xh.shape[0] != Xs.shape[0]:
        raise ValueError(f"sample count mismatch: {Xh.shape[0]} human vs {Xs.shape[0]} SRL")
    n, dim = Xh.shape
    if n < dim:
        raise ValueError(f"need at least {dim} samples to fit a {Xs.shape[1]}x{dim} mapping, got {n}")
    if not (np.all(np.isfinite(Xh)) and np.all(np.isfinite(Xs))):
        raise ValueError("calibration data contains non-finite values")

    _, sv, vt = np.linalg.svd(Xh, full_matrices=False)
    tol = sv.max() * max(Xh.shape) * np.finfo(float).eps if sv.size else 0.0
    if sv.size == 0 or sv[-1] <= tol:
        names = _dimension_names(dim)
        worst = int(np.argmax(np.abs(vt[-1])))
        raise CalibrationSingularError(
            f"human data is rank deficient: {names[worst]} is a linear combination of the other columns",
            dimension=names[worst],
        )

    A = Xh.T @ Xh
    B = Xs.T @ Xh
    ridge = bool(np.linalg.cond(A) > 1e12)
    if ridge:
        A = A + RIDGE_LAMBDA * np.eye(dim)
    C = np.linalg.solve(A, B.T).T
    resid = Xs - Xh @ C.T
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return MappingMatrix(C=C, residual_rms=rms, ridge=ridge)


def map_reference(C, human_state: JointStateVector) -> JointStateVector:
    M = C.C if isinstance(C, MappingMatrix) else np.asarray(C, dtype=float)
    x = human_state.x if isinstance(human_state, JointStateVector) else np.asarray(human_state, float)
    if M.ndim != 2 or M.shape[1] != x.size:
        raise ValueError(f"mapping of shape {M.shape} cannot act on a state of length {x.size}")
    return JointStateVector.from_stacked(M @ x)


def _periodic_lowpass(values: np.ndarray, dt: float, cutoff_hz: float) -> np.ndarray:
    """Zero-phase low-pass of one period of samples (brick-wall in the DFT domain)."""
    if cutoff_hz is None or cutoff_hz <= 0:
        return values
    spectrum = np.fft.rfft(values, axis=0)
    freqs = np.fft.rfftfreq(values.shape[0], d=dt)
    spectrum[freqs > cutoff_hz] = 0.0
    return np.fft.irfft(spectrum, n=values.shape[0], axis=0)


@dataclass(frozen=True)
class GaitTrajectory:
    """One gait cycle of joint angles/velocities sampled on a uniform grid.

    ``cycle_period`` defaults to ``n * dt``: the samples cover exactly one period
    and the first sample is not repeated at the end.
    """

    timestamps: np.ndarray
    angles: np.ndarray
    velocities: np.ndarray
    cycle_period: float = 0.0
    accel_cutoff_hz: float = 10.0

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        a = np.atleast_2d(np.asarray(self.angles, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if a.shape[0] != t.size and a.shape[1] == t.size:
            a, v = a.T, v.T
        if t.size < 2:
            raise GaitDataError("a gait trajectory needs at least 2 samples")
        if a.shape != v.shape or a.shape[0] != t.size:
            raise GaitDataError("angles/velocities must be (n_samples, n_joints) and match timestamps")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a)) and np.all(np.isfinite(v))):
            raise GaitDataError("gait trajectory contains non-finite values")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise GaitDataError("timestamps must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > UNIFORM_TOL:
            raise GaitDataError("timestamps must be uniformly spaced")
        period = float(self.cycle_period) or float(t[-1] - t[0] + steps[0])
        if period < t[-1] - t[0]:
            raise GaitDataError("cycle_period shorter than the sampled span")
        for name, arr in (("timestamps", t), ("angles", a), ("velocities", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "cycle_period", period)

    @property
    def dt(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0])

    @property
    def n_joints(self) -> int:
        return self.angles.shape[1]

    def __len__(self):
        return self.timestamps.size

    def sample(self, i: int) -> JointStateVector:
        return JointStateVector(self.angles[i], self.velocities[i])

    @cached_property
    def _splines(self):
        t0 = self.timestamps[0]
        knots = np.append(self.timestamps - t0, self.cycle_period)
        ang = np.vstack([self.angles, self.angles[:1]])
        vel = np.vstack([self.velocities, self.velocities[:1]])
        s_ang = CubicSpline(knots, ang, bc_type="periodic", axis=0)
        s_vel = CubicSpline(knots, vel, bc_type="periodic", axis=0)
        acc = s_vel(knots[:-1], 1)
        acc = _periodic_lowpass(acc, self.dt, self.accel_cutoff_hz)
        s_acc = CubicSpline(knots, np.vstack([acc, acc[:1]]), bc_type="periodic", axis=0)
        return t0, s_ang, s_vel, s_acc


def reference_at(traj: GaitTrajectory, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Desired (angle, velocity, acceleration) at time ``t``, wrapping every cycle.

    ``t`` may be a scalar (results are ``(n_joints,)``) or an array of times
    (results are ``(len(t), n_joints)``).
    """
    t0, s_ang, s_vel, s_acc = traj._splines
    tt = np.mod(np.asarray(t, dtype=float) - t0, traj.cycle_period)
    return s_ang(tt), s_vel(tt), s_acc(tt)


def load_gait_csv(path, rate_hz: float = 100.0, cycle_period: float | None = None) -> GaitTrajectory:
    """Read ``t,hip_h,knee_h,dhip_h,dknee_h`` rows; non-uniform time is resampled to ``rate_hz``."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GaitDataError(f"{path}: empty file", line=1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise GaitDataError(f"{path}:1: expected header {','.join(CSV_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise GaitDataError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno)
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise GaitDataError(f"{path}:{lineno}: malformed number in row {row!r}", line=lineno) from None
            if not all(math.isfinite(x) for x in vals):
                raise GaitDataError(f"{path}:{lineno}: non-finite value in row", line=lineno)
            if rows and vals[0] <= rows[-1][0]:
                raise GaitDataError(f"{path}:{lineno}: time is not strictly increasing", line=lineno)
            rows.append(vals)
    if len(rows) < 2:
        raise GaitDataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    data = np.array(rows)
    t = data[:, 0]
    steps = np.diff(t)
    if np.max(np.abs(steps - steps[0])) > UNIFORM_TOL:
        dt = 1.0 / rate_hz
        n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
        tn = t[0] + dt * np.arange(n)
        data = np.column_stack([tn] + [np.interp(tn, t, data[:, j]) for j in range(1, data.shape[1])])
    return GaitTrajectory(
        timestamps=data[:, 0],
        angles=data[:, 1:3],
        velocities=data[:, 3:5],
        cycle_period=cycle_period or 0.0,
    )


def save_gait_csv(traj: GaitTrajectory, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i in range(len(traj)):
            vals = (traj.timestamps[i], *traj.angles[i], *traj.velocities[i])
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")
    return path


@dataclass(frozen=True)
class GaitShape:
    """Two-harmonic joint profiles: angle(t) = mean + sum_k amp_k cos(k w t + phase_k)."""

    cycle_period: float = 1.1
    hip_mean: float = 0.4222
    hip_amps: tuple[float, float] = (0.2454, 0.048)
    hip_phases: tuple[float, float] = (3.1416, -0.1137)
    knee_mean: float = 0.3742
    knee_amps: tuple[float, float] = (0.2582, 0.001)
    knee_phases: tuple[float, float] = (3.2481, 2.8162)


def synthesize_gait(
    shape: GaitShape | None = None, rate_hz: float = 100.0, seed: int | None = None, jitter: float = 0.02
) -> GaitTrajectory:
    """Periodic two-joint gait with analytic velocities.

    With a seed, harmonic amplitudes are scaled by ``1 + jitter * N(0, 1)`` so
    that different seeds give different but equally plausible gaits.
    """
    shape = shape or GaitShape()
    n = int(round(shape.cycle_period * rate_hz))
    dt = shape.cycle_period / n
    t = dt * np.arange(n)
    w = 2.0 * math.pi / shape.cycle_period
    rng = np.random.default_rng(seed) if seed is not None else None

    def harmonic(mean, amps, phases):
        amps = np.asarray(amps, dtype=float)
        if rng is not None:
            amps = amps * (1.0 + jitter * rng.standard_normal(amps.size))
        ang = np.full_like(t, mean)
        vel = np.zeros_like(t)
        for k, (a, p) in enumerate(zip(amps, phases), start=1):
            ang += a * np.cos(k * w * t + p)
            vel -= a * k * w * np.sin(k * w * t + p)
        return ang, vel

    hip, dhip = harmonic(shape.hip_mean, shape.hip_amps, shape.hip_phases)
    knee, dknee = harmonic(shape.knee_mean, shape.knee_amps, shape.knee_phases)
    return GaitTrajectory(
        timestamps=t,
        angles=np.column_stack([hip, knee]),
        velocities=np.column_stack([dhip, dknee]),
        cycle_period=shape.cycle_period,
    )
