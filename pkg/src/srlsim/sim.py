"""Fixed-step closed-loop simulation of the SRL on a prescribed moving torso.

Physics runs at ``dt_physics`` with classical RK4; the controller and the
impedance scheduler run every ``dt_control`` and their outputs are held in
between.  Torso motion is replayed, not simulated.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import PhaseClassifier, PhaseDataset, classify
from .contact import ContactState, GaitPhase, GroundModel, PhaseThresholds, label_phase
from .controller import (
    ImpedanceParams,
    PidGains,
    approximate_disturbance,
    hybrid_control,
    nominal_impedance_inertia,
)
from .dynamics import GeneralizedState, ModelParams, energy_series, eval_terms, kernel_constants, srl_kernel, torso_terms
from .errors import ConfigError, DivergenceError
from .gait import GaitTrajectory, reference_at, synthesize_gait
from .metrics import DEFAULT_CUTOFF_HZ, RunMetrics, run_metrics
from .vic import (
    HIGH_DEFAULT,
    LOW_DEFAULT,
    GateConfig,
    ImpedanceLevel,
    SchedulerState,
    default_rate_caps,
    schedule_impedance,
)

MODES = ("IIC_low", "IIC_high", "VIC")
JOINT_LIMITS = ((-0.8, 1.2), (0.0, 2.2))


@dataclass(frozen=True)
class TorsoMotion:
    """Prescribed torso: vertical bob and pitch sway at the gait frequency."""

    x0: float = 0.0
    z0: float = 1.0713
    pitch0: float = 0.0
    amp_z: float = 0.02
    amp_pitch: float = math.radians(3.0)
    phase_z: float = -1.4376
    phase_pitch: float = 1.1411
    period: float | None = None

    def sample(self, t: np.ndarray, period: float):
        """Arrays (n, 3) of torso position, velocity and acceleration."""
        t = np.asarray(t, dtype=float)
        w = 2.0 * math.pi / (self.period or period)
        n = t.size
        q = np.zeros((n, 3))
        dq = np.zeros((n, 3))
        ddq = np.zeros((n, 3))
        q[:, 0] = self.x0
        for col, base, amp, ph in ((1, self.z0, self.amp_z, self.phase_z), (2, self.pitch0, self.amp_pitch, self.phase_pitch)):
            arg = w * t + ph
            q[:, col] = base + amp * np.sin(arg)
            dq[:, col] = amp * w * np.cos(arg)
            ddq[:, col] = -amp * w * w * np.sin(arg)
        return q, dq, ddq

    def static(self) -> "TorsoMotion":
        return replace(self, amp_z=0.0, amp_pitch=0.0)


@dataclass(frozen=True)
class Pulse:
    start: float
    duration: float
    amplitude: float
    joint: int = 0
    period: float | None = None  # repeat every `period` seconds when set

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        rel = t - self.start
        if self.period:
            rel = np.where(rel >= 0, np.mod(rel, self.period), rel)
        return np.where((rel >= 0) & (rel < self.duration), self.amplitude, 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    model: ModelParams = field(default_factory=ModelParams)
    ground: GroundModel = field(default_factory=GroundModel)
    thresholds: PhaseThresholds = field(default_factory=PhaseThresholds)
    gait: GaitTrajectory | None = None
    mapping: np.ndarray | None = None  # CLME matrix, identity when unset
    phase_offset: float = 0.5  # cycles; SRL follows the contralateral leg
    mode: str = "VIC"
    high: ImpedanceLevel = HIGH_DEFAULT
    low: ImpedanceLevel = LOW_DEFAULT
    alpha: float | None = None  # gate alpha; B0 / (2 M) when unset
    env_stiffness: float = 0.0
    rate_caps: bool = True
    pid: PidGains = field(default_factory=PidGains)
    torque_limit: float = 80.0
    dt_physics: float = 1e-3
    dt_control: float = 1e-2
    duration: float = 6.6
    torso: TorsoMotion = field(default_factory=TorsoMotion)
    disturbances: tuple[Pulse, ...] = ()
    seed: int = 0
    init_jitter: float = 0.01  # rad, seeded initial joint offset
    torso_jitter: float = 0.1  # fractional, seeded torso amplitude scale
    initial_error: tuple[float, float] = (0.0, 0.0)
    classifier: PhaseClassifier | None = None
    phase_source: str = "classifier"  # or "truth"
    torso_feedback: bool = True
    joint_limits: tuple[tuple[float, float], tuple[float, float]] | None = JOINT_LIMITS
    coulomb_torque: float = 0.0  # N m breakaway friction on each joint, off by default
    tau_d_bound: float = 80.0
    settle_time: float = 1.1
    rmsj_cutoff_hz: float | None = DEFAULT_CUTOFF_HZ
    run_id: str = ""

    @property
    def control_ratio(self) -> int:
        ratio = self.dt_control / self.dt_physics
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * ratio:
            raise ConfigError("dt_control must be an integer multiple of dt_physics")
        return n

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt_physics))

    def validate(self) -> "ScenarioConfig":
        self.model.validate()
        self.ground.validate()
        self.thresholds.validate()
        self.pid.validate()
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if not self.dt_physics > 0:
            raise ConfigError("dt_physics must be > 0")
        self.control_ratio
        if self.mode == "VIC" and self.phase_source == "classifier" and self.classifier is None:
            raise ConfigError("VIC mode needs a trained phase classifier (or phase_source = 'truth')")
        if self.phase_source not in ("classifier", "truth"):
            raise ConfigError("phase_source must be 'classifier' or 'truth'")
        if not self.torque_limit > 0:
            raise ConfigError("torque_limit must be > 0")
        ImpedanceParams(M=1.0, B=self.low.B, K=self.low.K).validate()
        SchedulerState.initial(1.0, self.high, self.low)
        return self

    def gait_trajectory(self) -> GaitTrajectory:
        return self.gait if self.gait is not None else synthesize_gait()


NUMERIC_COLUMNS = (
    "t", "x", "z", "pitch", "dx", "dz", "dpitch",
    "q1", "q2", "dq1", "dq2", "ddq1", "ddq2",
    "qd1", "qd2", "dqd1", "dqd2", "ddqd1", "ddqd2",
    "tau1", "tau2", "tau_d1", "tau_d2",
    "grf", "grf_t", "grf_rate", "foot_z",
    "B", "K", "approx_dist", "energy",
)  # fmt: skip
TEXT_COLUMNS = ("phase_true", "phase_pred", "gate")
CSV_COLUMNS = NUMERIC_COLUMNS[:27] + TEXT_COLUMNS + NUMERIC_COLUMNS[27:]


@dataclass
class SimRecord:
    columns: dict
    mode: str = ""
    run_id: str = ""
    seed: int = 0
    skips: int = 0
    bound_violations: int = 0

    def __len__(self):
        return int(self.columns["t"].size)

    def __getitem__(self, key):
        return self.columns[key]

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = [self.columns[c] for c in CSV_COLUMNS]
        text_idx = {CSV_COLUMNS.index(c) for c in TEXT_COLUMNS}
        lines = [",".join(CSV_COLUMNS)]
        for i in range(len(self)):
            lines.append(
                ",".join(str(col[i]) if j in text_idx else f"{col[i]:.10g}" for j, col in enumerate(cols))
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path) -> "SimRecord":
        path = Path(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ConfigError(f"{path}: empty record")
        header = lines[0].split(",")
        missing = [c for c in ("t", "q1", "qd1", "grf") if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
        rows = [ln.split(",") for ln in lines[1:] if ln]
        if not rows:
            raise ConfigError(f"{path}: record has no rows")
        columns = {}
        for j, name in enumerate(header):
            vals = [r[j] for r in rows]
            columns[name] = np.array(vals, dtype=object) if name in TEXT_COLUMNS else np.array(vals, dtype=float)
        prefix = path.stem.split("-")[0]
        return cls(columns=columns, mode=prefix if prefix in MODES else "", run_id=path.stem)


def _rng_for(cfg: ScenarioConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)


def simulate(cfg: ScenarioConfig) -> SimRecord:
    """Run one closed-loop scenario and return its per-physics-step trace."""
    cfg.validate()
    params = cfg.model
    c = params.as_tuple()
    ground = cfg.ground
    k_g, c_g, h_g, mu = ground.stiffness, ground.damping, ground.ground_height, ground.friction_coeff
    belt, v_eps = ground.belt_speed, ground.slip_velocity_scale
    dt = cfg.dt_physics
    n = cfg.n_steps
    ratio = cfg.control_ratio
    rng = _rng_for(cfg)

    gait = cfg.gait_trajectory()
    C = np.eye(2 * gait.n_joints) if cfg.mapping is None else np.asarray(cfg.mapping, dtype=float)
    torso = cfg.torso
    if cfg.torso_jitter:
        scale = 1.0 + cfg.torso_jitter * rng.standard_normal(2)
        torso = replace(torso, amp_z=torso.amp_z * scale[0], amp_pitch=torso.amp_pitch * scale[1])
    jitter = cfg.init_jitter * rng.standard_normal(2) if cfg.init_jitter else np.zeros(2)

    t_rows = dt * np.arange(n + 1)
    t_half = 0.5 * dt * np.arange(2 * n + 1)
    qb_h, dqb_h, ddqb_h = torso.sample(t_half, gait.cycle_period)
    tau_d = np.zeros((2 * n + 1, 2))
    for pulse in cfg.disturbances:
        tau_d[:, pulse.joint] += pulse.evaluate(t_half)
    taud_list = [tuple(r) for r in tau_d.tolist()] if cfg.disturbances else None
    tt_list = list(zip(*(np.broadcast_to(v, t_half.shape).tolist() for v in torso_terms(c, qb_h, dqb_h, ddqb_h))))
    kc = kernel_constants(c)

    ang, vel, acc = reference_at(gait, t_rows + cfg.phase_offset * gait.cycle_period)
    xs = np.hstack([ang, vel]) @ C.T
    dxs = np.hstack([vel, acc]) @ C.T
    nj = gait.n_joints
    q_ref, dq_ref, ddq_ref = xs[:, :nj], xs[:, nj:], dxs[:, nj:]

    M_imp = nominal_impedance_inertia(params)
    low, high = ImpedanceLevel(*cfg.low), ImpedanceLevel(*cfg.high)
    alpha = cfg.alpha if cfg.alpha is not None else 0.5 * low.B / M_imp
    gate = GateConfig(alpha=alpha, env_stiffness=cfg.env_stiffness, dt_control=cfg.dt_control).validate()
    caps = default_rate_caps(high, low, cfg.dt_control) if cfg.rate_caps else (math.inf, math.inf)
    sched = SchedulerState.initial(M_imp, high, low, dBmax=caps[0], dKmax=caps[1])
    if cfg.mode == "IIC_low":
        fixed = ImpedanceParams(M=M_imp, B=low.B, K=low.K)
    elif cfg.mode == "IIC_high":
        fixed = ImpedanceParams(M=M_imp, B=high.B, K=high.K)
    else:
        fixed = None
    use_truth = cfg.phase_source == "truth"
    limits = cfg.joint_limits
    tau_c = cfg.coulomb_torque

    # plain lists while stepping; item writes on them are cheaper than on arrays
    out = {name: [0.0] * (n + 1) for name in NUMERIC_COLUMNS}
    phase_true = np.empty(n + 1, dtype=object)
    phase_pred = np.empty(n + 1, dtype=object)
    gate_col = np.empty(n + 1, dtype=object)

    g_tuple = (k_g, c_g, h_g, mu, belt, v_eps)

    def deriv(k, q1, q2, dq1, dq2, tau1, tau2):
        t1, t2 = tau1, tau2
        if taud_list is not None:
            td1, td2 = taud_list[k]
            t1 += td1
            t2 += td2
        if tau_c:
            t1 -= tau_c * math.tanh(dq1 / 0.01)
            t2 -= tau_c * math.tanh(dq2 / 0.01)
        return srl_kernel(kc, g_tuple, tt_list[k], q1, q2, dq1, dq2, t1, t2)

    q1, q2 = (q_ref[0] + np.asarray(cfg.initial_error) + jitter).tolist()
    dq1, dq2 = dq_ref[0].tolist()
    tau1 = tau2 = 0.0
    integral = 0.0
    imp = fixed if fixed is not None else sched.last_accepted
    grf_prev = None
    grf_rate = 0.0
    truth = pred = GaitPhase.SWING
    pred_code = "NA"
    verdict = "ok"
    approx = 0.0
    skips = 0
    violations = 0

    for i in range(n + 1):
        k = 2 * i
        if i % ratio == 0:
            _, _, fx, fz, _ = srl_kernel(kc, g_tuple, tt_list[k], q1, q2, dq1, dq2, 0.0, 0.0)
            grf_rate = 0.0 if grf_prev is None else (fz - grf_prev) / cfg.dt_control
            grf_prev = fz
            state = GeneralizedState(qb_h[k], (q1, q2), dqb_h[k], (dq1, dq2))
            truth = label_phase(ContactState(0.0, 0.0, fz, fx, fz > 0), grf_rate, cfg.thresholds)
            refs = (q_ref[i], dq_ref[i], ddq_ref[i])
            if fixed is None:
                feats = np.array([abs(q1 - q_ref[i, 0]), abs(dq1 - dq_ref[i, 0]), fz, grf_rate])
                imp, sched = schedule_impedance(
                    sched, None if use_truth else cfg.classifier, feats, gate, phase=truth if use_truth else None
                )
                pred = sched.current_label
                pred_code = pred.code
                verdict = sched.last_verdict.label
                skips = sched.skips
            approx = approximate_disturbance(imp, refs, state)
            if approx > cfg.tau_d_bound:
                violations += 1
            terms = eval_terms(params, state)
            cmd = hybrid_control(
                terms,
                refs,
                state,
                ddqb_h[k],
                imp,
                cfg.pid,
                cfg.dt_control,
                cfg.torque_limit,
                integral,
                cfg.torso_feedback,
            )
            tau1, tau2 = float(cmd.tau_s[0]), float(cmd.tau_s[1])
            integral = cmd.integral
            if not (math.isfinite(tau1) and math.isfinite(tau2)):
                raise DivergenceError(f"non-finite control torque at t={t_rows[i]:.4f}s", t_rows[i])

        a1, a2, fx, fz, pz = deriv(k, q1, q2, dq1, dq2, tau1, tau2)
        row = out
        row["q1"][i], row["q2"][i], row["dq1"][i], row["dq2"][i] = q1, q2, dq1, dq2
        row["ddq1"][i], row["ddq2"][i] = a1, a2
        row["tau1"][i], row["tau2"][i] = tau1, tau2
        row["grf"][i], row["grf_t"][i], row["foot_z"][i] = fz, fx, pz
        row["grf_rate"][i] = grf_rate
        row["B"][i], row["K"][i] = imp.B, imp.K
        row["approx_dist"][i] = approx
        phase_true[i] = truth.code
        phase_pred[i] = pred_code
        gate_col[i] = verdict
        if i == n:
            break

        # classical RK4; contact and torso re-evaluated at every stage
        h = dt
        k1 = (dq1, dq2, a1, a2)
        s = deriv(k + 1, q1 + 0.5 * h * k1[0], q2 + 0.5 * h * k1[1], dq1 + 0.5 * h * k1[2], dq2 + 0.5 * h * k1[3], tau1, tau2)
        k2 = (dq1 + 0.5 * h * k1[2], dq2 + 0.5 * h * k1[3], s[0], s[1])
        s = deriv(k + 1, q1 + 0.5 * h * k2[0], q2 + 0.5 * h * k2[1], dq1 + 0.5 * h * k2[2], dq2 + 0.5 * h * k2[3], tau1, tau2)
        k3 = (dq1 + 0.5 * h * k2[2], dq2 + 0.5 * h * k2[3], s[0], s[1])
        s = deriv(k + 2, q1 + h * k3[0], q2 + h * k3[1], dq1 + h * k3[2], dq2 + h * k3[3], tau1, tau2)
        k4 = (dq1 + h * k3[2], dq2 + h * k3[3], s[0], s[1])
        q1 += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        q2 += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        dq1 += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        dq2 += h / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        if not all(math.isfinite(v) for v in (q1, q2, dq1, dq2)):
            raise DivergenceError(f"state diverged after t={t_rows[i]:.4f}s", t_rows[i])
        if limits is not None:
            (lo1, hi1), (lo2, hi2) = limits
            if q1 < lo1 or q1 > hi1:
                q1 = min(max(q1, lo1), hi1)
                dq1 = 0.0
            if q2 < lo2 or q2 > hi2:
                q2 = min(max(q2, lo2), hi2)
                dq2 = 0.0

    out = {name: np.array(values, dtype=float) for name, values in out.items()}
    out["t"][:] = t_rows
    qb_rows, dqb_rows = qb_h[::2], dqb_h[::2]
    out["x"][:], out["z"][:], out["pitch"][:] = qb_rows.T
    out["dx"][:], out["dz"][:], out["dpitch"][:] = dqb_rows.T
    out["qd1"][:], out["qd2"][:] = q_ref.T
    out["dqd1"][:], out["dqd2"][:] = dq_ref.T
    out["ddqd1"][:], out["ddqd2"][:] = ddq_ref.T
    out["tau_d1"][:], out["tau_d2"][:] = tau_d[::2].T
    out["energy"][:] = energy_series(
        params, qb_rows, dqb_rows, np.column_stack([out["q1"], out["q2"]]), np.column_stack([out["dq1"], out["dq2"]])
    )
    columns = dict(out)
    columns["phase_true"] = phase_true
    columns["phase_pred"] = phase_pred
    columns["gate"] = gate_col
    return SimRecord(
        columns=columns,
        mode=cfg.mode,
        run_id=cfg.run_id,
        seed=cfg.seed,
        skips=skips,
        bound_violations=violations,
    )


run_scenario = simulate


def record_metrics(record: SimRecord, cfg: ScenarioConfig) -> RunMetrics:
    return run_metrics(
        record["t"],
        record["grf"],
        record["q1"],
        record["qd1"],
        cfg.thresholds.contact,
        cfg.rmsj_cutoff_hz,
        cfg.settle_time,
    )


def phase_dataset(record: SimRecord, cfg: ScenarioConfig) -> PhaseDataset:
    """Classifier training samples taken at every control instant of a run."""
    idx = np.arange(0, len(record), cfg.control_ratio)
    X = np.column_stack(
        [
            np.abs(record["q1"][idx] - record["qd1"][idx]),
            np.abs(record["dq1"][idx] - record["dqd1"][idx]),
            record["grf"][idx],
            record["grf_rate"][idx],
        ]
    )
    y = np.array([int(GaitPhase.from_code(p)) for p in record["phase_true"][idx]])
    return PhaseDataset(X, y)


def step(state: GeneralizedState, tau_s, cfg: ScenarioConfig, t: float = 0.0, h: float | None = None):
    """Advance one RK4 step with the torso following ``cfg.torso`` and torque held.

    Returns the new :class:`GeneralizedState`.  Contact, disturbance and the
    torso are evaluated at each stage time; joint limits are applied at the end.
    """
    params = cfg.model
    c = params.as_tuple()
    h = cfg.dt_physics if h is None else h
    gait_period = cfg.gait_trajectory().cycle_period if cfg.torso.period is None else cfg.torso.period
    times = np.array([t, t + 0.5 * h, t + h])
    qb, dqb, ddqb = cfg.torso.sample(times, gait_period)
    tau_d = np.zeros((3, 2))
    for pulse in cfg.disturbances:
        tau_d[:, pulse.joint] += pulse.evaluate(times)
    g = cfg.ground
    g_tuple = (g.stiffness, g.damping, g.ground_height, g.friction_coeff, g.belt_speed, g.slip_velocity_scale)
    kc = kernel_constants(c)
    tt = list(zip(*(np.broadcast_to(v, times.shape).tolist() for v in torso_terms(c, qb, dqb, ddqb))))
    tau1, tau2 = (float(v) for v in np.asarray(tau_s, dtype=float))

    def deriv(k, y):
        q1, q2, dq1, dq2 = y
        a1, a2, _, _, _ = srl_kernel(kc, g_tuple, tt[k], q1, q2, dq1, dq2, tau1 + tau_d[k, 0], tau2 + tau_d[k, 1])
        return np.array([dq1, dq2, a1, a2])

    if not state.is_finite():
        raise DivergenceError(f"non-finite state at t={t}", t)
    y = np.concatenate([state.q_s, state.dq_s])
    k1 = deriv(0, y)
    k2 = deriv(1, y + 0.5 * h * k1)
    k3 = deriv(1, y + 0.5 * h * k2)
    k4 = deriv(2, y + h * k3)
    y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"state diverged after t={t}", t)
    if cfg.joint_limits is not None:
        for j, (lo, hi) in enumerate(cfg.joint_limits):
            if y[j] < lo or y[j] > hi:
                y[j] = min(max(y[j], lo), hi)
                y[2 + j] = 0.0
    return GeneralizedState(qb[2], y[:2], dqb[2], y[2:])


@dataclass
class SweepResult:
    records: list
    rows: list
    errors: list

    def summary(self) -> list[dict]:
        """Mean and standard deviation of every metric per controller mode."""
        out = []
        for mode in sorted({r["mode"] for r in self.rows}, key=lambda m: MODES.index(m) if m in MODES else 99):
            sel = [r for r in self.rows if r["mode"] == mode]
            entry = {"mode": mode, "runs": len(sel)}
            for key in ("rmsj", "peak_force_N", "rms_err_rad"):
                vals = np.array([r[key] for r in sel], dtype=float)
                entry[f"{key}_mean"] = float(np.mean(vals))
                entry[f"{key}_std"] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out.append(entry)
        return out


def _run_one(cfg: ScenarioConfig):
    try:
        rec = simulate(cfg)
    except Exception as exc:  # noqa: BLE001 - reported per run, sweep continues
        return None, None, f"{type(exc).__name__}: {exc}"
    m = record_metrics(rec, cfg)
    row = {
        "run_id": cfg.run_id,
        "mode": cfg.mode,
        "rmsj": m.rmsj,
        "peak_force_N": m.peak_force,
        "rms_err_rad": m.rms_err,
    }
    return rec, row, None


def sweep_workers(requested: int | None = None) -> int:
    env = os.environ.get("SRL_SIM_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, min(requested or cap, cap))


def run_sweep(configs, workers: int | None = None) -> SweepResult:
    """Run independent scenarios (in parallel processes when allowed) and collect metrics."""
    configs = list(configs)
    if not configs:
        raise ConfigError("a sweep needs at least one scenario")
    workers = sweep_workers(workers)
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, configs))
    else:
        results = [_run_one(c) for c in configs]
    records, rows, errors = [], [], []
    for cfg, (rec, row, err) in zip(configs, results):
        records.append(rec)
        if err is None:
            rows.append(row)
        else:
            errors.append((cfg.run_id, err))
    return SweepResult(records, rows, errors)
