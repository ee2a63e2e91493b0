"""TOML scenario files.

A file describes one scenario, optionally with a ``[sweep]`` table that fans
it out over controller modes and seeds.  Relative paths are resolved against
the directory holding the file.  Overrides use ``section.key=value`` with the
value parsed as a TOML literal (bare words fall back to strings).

Schema (every table and key is optional)::

    [scenario]   mode, duration, dt_physics, dt_control, seed, phase_offset,
                 torque_limit, phase_source, torso_feedback, init_jitter,
                 torso_jitter, initial_error, settle_time, rmsj_cutoff_hz,
                 tau_d_bound, coulomb_torque, joint_limits, run_id
    [gait]       file, rate_hz, cycle_period, mapping (4x4 rows) or the
                 synthesizer keys hip_mean, hip_amps, hip_phases, knee_mean,
                 knee_amps, knee_phases, seed, jitter
    [model]      ModelParams fields
    [ground]     stiffness, damping, ground_height, friction_coeff,
                 belt_speed, slip_velocity_scale
    [thresholds] contact, stance, rise_rate, expected_peak
    [impedance]  high = [B, K], low = [B, K]
    [gate]       alpha, env_stiffness, rate_caps
    [pid]        kp, ki, kd, integral_limit
    [torso]      TorsoMotion fields
    [[disturbance]] start, duration, amplitude, joint, period
    [classifier] file
    [sweep]      modes, seeds, workers
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .classifier import load_classifier
from .contact import GroundModel, PhaseThresholds
from .controller import PidGains
from .dynamics import ModelParams
from .errors import ConfigError
from .gait import GaitShape, load_gait_csv, synthesize_gait
from .sim import MODES, Pulse, ScenarioConfig, TorsoMotion
from .vic import ImpedanceLevel


def _fields(cls, exclude=()):
    return {f.name for f in dataclasses.fields(cls)} - set(exclude)


SCENARIO_KEYS = {
    "mode", "duration", "dt_physics", "dt_control", "seed", "phase_offset", "torque_limit",
    "phase_source", "torso_feedback", "init_jitter", "torso_jitter", "initial_error",
    "settle_time", "rmsj_cutoff_hz", "tau_d_bound", "coulomb_torque", "joint_limits", "run_id",
}  # fmt: skip
SCHEMA = {
    "scenario": SCENARIO_KEYS,
    "gait": {"file", "rate_hz", "cycle_period", "mapping", "seed", "jitter"} | _fields(GaitShape),
    "model": _fields(ModelParams),
    "ground": _fields(GroundModel),
    "thresholds": {"contact", "stance", "rise_rate", "expected_peak"},
    "impedance": {"high", "low"},
    "gate": {"alpha", "env_stiffness", "rate_caps"},
    "pid": _fields(PidGains),
    "torso": _fields(TorsoMotion),
    "disturbance": _fields(Pulse),
    "classifier": {"file"},
    "sweep": {"modes", "seeds", "workers"},
}


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Return a copy of ``doc`` with ``section.key=value`` assignments applied."""
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if section not in SCHEMA or section == "disturbance":
            raise ConfigError(f"override {item!r}: unknown section {section!r}")
        if name not in SCHEMA[section]:
            raise ConfigError(f"override {item!r}: unknown key {name!r} in [{section}]")
        doc.setdefault(section, {})[name] = _parse_value(value.strip())
    return doc


def _check_keys(doc: dict, source):
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        tables = body if isinstance(body, list) else [body]
        for table in tables:
            if not isinstance(table, dict):
                raise ConfigError(f"{source}: [{section}] must be a table")
            unknown = sorted(set(table) - SCHEMA[section])
            if unknown:
                raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)} in [{section}]")


def read_document(path, overrides=()) -> tuple[dict, Path]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    _check_keys(doc, path)
    return apply_overrides(doc, overrides), path.parent.resolve()


def _tuples(table: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}


def _build(cls, table: dict, section: str):
    try:
        return cls(**_tuples(table))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def _gait(table: dict, base: Path):
    table = dict(table)
    mapping = table.pop("mapping", None)
    if mapping is not None:
        mapping = np.asarray(mapping, dtype=float)
        if mapping.shape != (4, 4):
            raise ConfigError("[gait] mapping must be a 4x4 array")
    if "file" in table:
        file = base / table.pop("file")
        if not file.is_file():
            raise ConfigError(f"gait file not found: {file}")
        gait = load_gait_csv(file, rate_hz=table.pop("rate_hz", 100.0), cycle_period=table.pop("cycle_period", None))
        if table:
            raise ConfigError(f"[gait] keys {', '.join(sorted(table))} cannot be combined with a gait file")
        return gait, mapping
    synth = {k: table.pop(k) for k in ("rate_hz", "seed", "jitter") if k in table}
    shape = _build(GaitShape, table, "gait")
    return synthesize_gait(shape, **synth), mapping


def scenario_from_document(doc: dict, base: Path) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig` from a parsed document."""
    kwargs = _tuples(doc.get("scenario", {}))
    if "joint_limits" in kwargs and kwargs["joint_limits"] is not None:
        kwargs["joint_limits"] = tuple(tuple(r) for r in kwargs["joint_limits"])
    if "model" in doc:
        kwargs["model"] = _build(ModelParams, doc["model"], "model")
    if "ground" in doc:
        kwargs["ground"] = _build(GroundModel, doc["ground"], "ground")
    if "thresholds" in doc:
        th = dict(doc["thresholds"])
        peak = th.pop("expected_peak", None)
        if peak is not None:
            if "stance" in th:
                raise ConfigError("[thresholds] give either stance or expected_peak, not both")
            kwargs["thresholds"] = PhaseThresholds.from_expected_peak(float(peak), **th)
        else:
            kwargs["thresholds"] = _build(PhaseThresholds, th, "thresholds")
    if "gait" in doc:
        kwargs["gait"], kwargs["mapping"] = _gait(doc["gait"], base)
    imp = doc.get("impedance", {})
    for level in ("high", "low"):
        if level in imp:
            pair = imp[level]
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError(f"[impedance] {level} must be [B, K]")
            kwargs[level] = ImpedanceLevel(float(pair[0]), float(pair[1]))
    gate = doc.get("gate", {})
    for key in ("alpha", "env_stiffness", "rate_caps"):
        if key in gate:
            kwargs[key] = gate[key]
    if "pid" in doc:
        kwargs["pid"] = _build(PidGains, doc["pid"], "pid")
    if "torso" in doc:
        kwargs["torso"] = _build(TorsoMotion, doc["torso"], "torso")
    if "disturbance" in doc:
        pulses = doc["disturbance"] if isinstance(doc["disturbance"], list) else [doc["disturbance"]]
        kwargs["disturbances"] = tuple(_build(Pulse, p, "disturbance") for p in pulses)
    if "classifier" in doc and "file" in doc["classifier"]:
        file = base / doc["classifier"]["file"]
        if not file.is_file():
            raise ConfigError(f"classifier file not found: {file}")
        kwargs["classifier"] = load_classifier(file)
    try:
        cfg = ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if not cfg.run_id:
        cfg = dataclasses.replace(cfg, run_id=f"{cfg.mode}-s{cfg.seed}")
    return cfg.validate()


def load_scenario(path, overrides=()) -> ScenarioConfig:
    doc, base = read_document(path, overrides)
    return scenario_from_document(doc, base)


def load_sweep(path, overrides=()) -> tuple[list[ScenarioConfig], int | None]:
    """Expand a file's ``[sweep]`` table into one config per (mode, seed).

    Without a ``[sweep]`` table the file is a single-scenario sweep.
    """
    doc, base = read_document(path, overrides)
    sweep = doc.get("sweep", {})
    modes = sweep.get("modes", [doc.get("scenario", {}).get("mode", "VIC")])
    seeds = sweep.get("seeds", [doc.get("scenario", {}).get("seed", 0)])
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"[sweep] unknown mode(s): {', '.join(map(str, bad))}")
    if not modes or not seeds:
        raise ConfigError("[sweep] needs at least one mode and one seed")
    configs = []
    for mode in modes:
        for seed in seeds:
            d = apply_overrides(doc, [f"scenario.mode={mode!r}".replace("'", '"'), f"scenario.seed={int(seed)}"])
            d["scenario"]["run_id"] = f"{mode}-s{int(seed)}"
            d.pop("sweep", None)
            configs.append(scenario_from_document(d, base))
    return configs, sweep.get("workers")
