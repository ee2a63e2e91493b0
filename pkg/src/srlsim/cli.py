"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 bad configuration or input data,
4 failure while running.  Every file written is printed on stdout.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .classifier import (
    accuracy,
    load_dataset_csv,
    save_classifier,
    save_dataset_csv,
    train_classifier,
)
from .config import load_scenario, load_sweep
from .contact import GroundModel
from .errors import SrlSimError
from .gait import calibrate_clme, load_gait_csv, save_gait_csv, synthesize_gait
from .metrics import DEFAULT_CUTOFF_HZ, run_metrics
from .plotting import KINDS, write_svg
from .sim import MODES, ScenarioConfig, SimRecord, phase_dataset, record_metrics, run_sweep, simulate

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

METRIC_COLUMNS = ("run_id", "mode", "rmsj", "peak_force_N", "rms_err_rad")
SUMMARY_COLUMNS = (
    "mode", "runs", "rmsj_mean", "rmsj_std", "peak_force_N_mean", "peak_force_N_std",
    "rms_err_rad_mean", "rms_err_rad_std",
)  # fmt: skip

FIXTURE_SEEDS = 2
FIXTURE_FILES = ("gait.csv", "phase_dataset.csv", "classifier.bin", "vic.toml", "iic_low.toml", "iic_high.toml", "sweep.toml", "torso.toml")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])
    return path


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metric_row(cfg: ScenarioConfig, rec: SimRecord) -> dict:
    m = record_metrics(rec, cfg)
    return {"run_id": cfg.run_id, "mode": cfg.mode, "rmsj": m.rmsj, "peak_force_N": m.peak_force, "rms_err_rad": m.rms_err}


def cmd_run(args) -> list[Path]:
    cfg = load_scenario(args.config, args.set)
    out = _outdir(args.out)
    rec = simulate(cfg)
    written = [rec.to_csv(out / f"{cfg.run_id}.csv")]
    written.append(_write_csv(out / f"{cfg.run_id}_metrics.csv", METRIC_COLUMNS, [_metric_row(cfg, rec)]))
    for kind in KINDS:
        written.append(write_svg([rec], kind, out / f"{cfg.run_id}_{kind}.svg"))
    return written


def cmd_sweep(args) -> list[Path]:
    configs, workers = load_sweep(args.config, args.set)
    out = _outdir(args.out)
    result = run_sweep(configs, args.workers or workers)
    written = []
    for cfg, rec in zip(configs, result.records):
        if rec is not None:
            written.append(rec.to_csv(out / f"{cfg.run_id}.csv"))
    written.append(_write_csv(out / "metrics.csv", METRIC_COLUMNS, result.rows))
    if result.rows:
        written.append(_write_csv(out / "summary.csv", SUMMARY_COLUMNS, result.summary()))
    # one panel per mode, taken from the first successful seed
    firsts = {}
    for cfg, rec in zip(configs, result.records):
        if rec is not None and cfg.mode not in firsts:
            firsts[cfg.mode] = rec
    panels = [firsts[m] for m in MODES if m in firsts]
    if panels:
        for kind in KINDS:
            written.append(write_svg(panels, kind, out / f"{kind}.svg"))
    for run_id, err in result.errors:
        print(f"run {run_id} failed: {err}", file=sys.stderr)
    if result.errors:
        _print_written(written)
        raise _PartialFailure(f"{len(result.errors)} of {len(configs)} runs failed")
    return written


class _PartialFailure(RuntimeError):
    pass


def cmd_train(args) -> list[Path]:
    ds = load_dataset_csv(args.data)
    out = _outdir(args.out)
    clf = train_classifier(ds, seed=args.seed, epochs=args.epochs)
    path = save_classifier(clf, out / "classifier.bin")
    print(f"accuracy on the full dataset: {accuracy(clf, ds):.4f}")
    return [path]


def _state_matrix(path) -> np.ndarray:
    traj = load_gait_csv(path)
    return np.column_stack([traj.angles, traj.velocities])


def cmd_calibrate(args) -> list[Path]:
    human = _state_matrix(args.human)
    srl = _state_matrix(args.srl)
    mapping = calibrate_clme(human, srl)
    out = _outdir(args.out)
    path = out / "mapping.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hip_h", "knee_h", "dhip_h", "dknee_h"])
        for row in mapping.C:
            w.writerow([_fmt(v) for v in row])
    print(f"residual rms: {mapping.residual_rms:.6g}{' (ridge regularised)' if mapping.ridge else ''}")
    return [path]


def cmd_metrics(args) -> list[Path]:
    defaults = load_scenario(args.config, args.set) if args.config else ScenarioConfig()
    contact = args.contact_threshold if args.contact_threshold is not None else defaults.thresholds.contact
    settle = args.settle_time if args.settle_time is not None else defaults.settle_time
    cutoff = args.cutoff_hz if args.cutoff_hz is not None else defaults.rmsj_cutoff_hz
    rows = []
    for file in args.record:
        rec = SimRecord.from_csv(file)
        m = run_metrics(rec["t"], rec["grf"], rec["q1"], rec["qd1"], contact, cutoff, settle)
        rows.append({"run_id": rec.run_id, "mode": rec.mode, "rmsj": m.rmsj, "peak_force_N": m.peak_force, "rms_err_rad": m.rms_err})
    out = _outdir(args.out)
    print(f"rmsj low-pass cutoff: {cutoff} Hz")
    return [_write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)]


def cmd_plot(args) -> list[Path]:
    records = [SimRecord.from_csv(f) for f in args.record]
    out = _outdir(args.out)
    name = args.name or (records[0].run_id if len(records) == 1 else "comparison")
    return [write_svg(records, args.kind, out / f"{name}_{args.kind}.svg")]


# The bundled scenarios walk on a soft, compliant belt; library ground defaults
# stay stiff for other scenarios.
FIXTURE_GROUND = GroundModel(stiffness=2413.0, damping=75.3)
_FIXTURE_COMMON = (
    f"[ground]\nstiffness = {FIXTURE_GROUND.stiffness}\ndamping = {FIXTURE_GROUND.damping}\n\n"
    '[gait]\nfile = "gait.csv"\n'
)
FIXTURE_TOML = {
    "vic.toml": '[scenario]\nmode = "VIC"\n\n' + _FIXTURE_COMMON + '\n[classifier]\nfile = "classifier.bin"\n',
    "iic_low.toml": '[scenario]\nmode = "IIC_low"\n\n' + _FIXTURE_COMMON,
    "iic_high.toml": '[scenario]\nmode = "IIC_high"\n\n' + _FIXTURE_COMMON,
    "sweep.toml": (
        '[scenario]\nmode = "VIC"\n\n' + _FIXTURE_COMMON + '\n[classifier]\nfile = "classifier.bin"\n\n'
        '[sweep]\nmodes = ["IIC_low", "IIC_high", "VIC"]\nseeds = [0, 1, 2, 3, 4, 5]\n'
    ),
    # the leg swings clear of the belt so only the torso oscillation disturbs tracking
    "torso.toml": (
        '[scenario]\nmode = "IIC_high"\n\n[ground]\nground_height = -10.0\n\n'
        '[gait]\nfile = "gait.csv"\n\n[classifier]\nfile = "classifier.bin"\n'
    ),
}


def generate_fixtures(out: Path, seed: int = 0) -> list[Path]:
    """Bundled gait, labelled phase dataset, trained classifier and scenario files.

    The gait is the default synthetic profile, 110 rows (1.1 s at 100 Hz).  The
    dataset holds one sample per control cycle from ground-truth-labelled runs
    of every mode over ``FIXTURE_SEEDS`` seeds: 3 modes x 2 seeds x 661
    samples = 3966 rows with the default duration.
    """
    out = _outdir(out)
    gait = synthesize_gait()
    written = [save_gait_csv(gait, out / "gait.csv")]
    gait = load_gait_csv(out / "gait.csv")
    ds = None
    for mode in MODES:
        for k in range(FIXTURE_SEEDS):
            cfg = ScenarioConfig(
                gait=gait,
                ground=FIXTURE_GROUND,
                mode=mode,
                seed=seed + k,
                phase_source="truth",
                run_id=f"{mode}-s{seed + k}",
            )
            part = phase_dataset(simulate(cfg), cfg)
            ds = part if ds is None else ds.extend(part)
    written.append(save_dataset_csv(ds, out / "phase_dataset.csv"))
    clf = train_classifier(ds, seed=seed)
    written.append(save_classifier(clf, out / "classifier.bin"))
    for name, text in FIXTURE_TOML.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


def cmd_gen_fixtures(args) -> list[Path]:
    return generate_fixtures(Path(args.out), args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srlsim", description="Wearable-leg simulator: runs, sweeps, metrics and plots.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required, help="scenario TOML file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")

    sp = sub.add_parser("run", help="simulate one scenario")
    with_config(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="simulate every (mode, seed) of a sweep file")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, default=None, help="parallel processes (capped by SRL_SIM_THREADS)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("train-classifier", help="fit the phase classifier to a labelled dataset CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=60)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("calibrate", help="fit the human-to-leg linear mapping from two gait CSVs")
    sp.add_argument("--human", required=True)
    sp.add_argument("--srl", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("metrics", help="recompute metrics from record CSVs")
    sp.add_argument("--record", required=True, action="append")
    sp.add_argument("--out", required=True)
    with_config(sp, required=False)
    sp.add_argument("--contact-threshold", type=float, default=None)
    sp.add_argument("--settle-time", type=float, default=None)
    sp.add_argument("--cutoff-hz", type=float, default=None, help=f"RMSJ low-pass cutoff (default {DEFAULT_CUTOFF_HZ})")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("plot", help="draw record CSVs as an SVG, one panel per record")
    sp.add_argument("--record", required=True, action="append")
    sp.add_argument("--kind", choices=sorted(KINDS), default="trajectory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--name", default=None, help="file stem (default: run id or 'comparison')")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("gen-fixtures", help="regenerate the bundled fixture files")
    sp.add_argument("--out", default="fixtures")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_fixtures)
    return p


def _print_written(paths):
    for path in paths:
        print(path)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        written = args.func(args)
    except _PartialFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SrlSimError, FileNotFoundError) as exc:
        if isinstance(exc, RuntimeError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_written(written)
    return 0


if __name__ == "__main__":
    sys.exit(main())
