import numpy as np
import pytest

from srlsim.cli import EXIT_CONFIG, EXIT_RUNTIME, EXIT_USAGE, main
from srlsim.config import apply_overrides, load_scenario, load_sweep
from srlsim.errors import ConfigError, PlotError
from srlsim.gait import save_gait_csv, synthesize_gait
from srlsim.plotting import render_svg, write_svg
from srlsim.sim import ScenarioConfig, SimRecord, simulate

SHORT = """[scenario]
mode = "IIC_high"
duration = 0.6
phase_source = "truth"
settle_time = 0.0
"""


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text(SHORT)
    return path


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "sweep" in capsys.readouterr().out


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["run", "--config", "x.toml"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_missing_config_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[scenario]\nmode = "VIC"\nspeed = 3\n')
    with pytest.raises(ConfigError, match="speed"):
        load_scenario(bad)
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_run_writes_record_metrics_and_plots(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(scenario), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "IIC_high-s0.csv", "IIC_high-s0_force.svg", "IIC_high-s0_impedance.svg",
        "IIC_high-s0_metrics.csv", "IIC_high-s0_trajectory.svg",
    ]  # fmt: skip
    rec = SimRecord.from_csv(out / "IIC_high-s0.csv")
    assert len(rec) == 601
    header = (out / "IIC_high-s0_metrics.csv").read_text().splitlines()[0]
    assert header == "run_id,mode,rmsj,peak_force_N,rms_err_rad"
    assert str(out / "IIC_high-s0.csv") in capsys.readouterr().out


def test_run_is_byte_reproducible(scenario, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(scenario), "--out", str(a)])
    main(["run", "--config", str(scenario), "--out", str(b)])
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_overrides(scenario):
    cfg = load_scenario(scenario, ["scenario.seed=7", "ground.stiffness=5000", 'scenario.mode="IIC_low"'])
    assert cfg.seed == 7 and cfg.ground.stiffness == 5000.0 and cfg.mode == "IIC_low"
    assert cfg.run_id == "IIC_low-s7"
    with pytest.raises(ConfigError):
        apply_overrides({}, ["nodot=1"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["scenario.bogus=1"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["nowhere.mode=1"])


def test_sweep_expansion(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text(SHORT + '\n[sweep]\nmodes = ["IIC_low", "IIC_high"]\nseeds = [3, 4]\nworkers = 1\n')
    configs, workers = load_sweep(path)
    assert [c.run_id for c in configs] == ["IIC_low-s3", "IIC_low-s4", "IIC_high-s3", "IIC_high-s4"]
    assert workers == 1
    path.write_text(SHORT + '\n[sweep]\nmodes = ["FAST"]\n')
    with pytest.raises(ConfigError):
        load_sweep(path)


def test_sweep_command(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text(SHORT.replace("0.6", "2.4") + '\n[sweep]\nmodes = ["IIC_low", "IIC_high"]\nseeds = [0, 1]\n')
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(path), "--out", str(out), "--workers", "1"]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("mode,runs,")
    assert [line.split(",")[0] for line in summary[1:]] == ["IIC_low", "IIC_high"]
    assert (out / "trajectory.svg").is_file()


def test_sweep_partial_failure_exit_code(tmp_path, monkeypatch, capsys):
    import srlsim.sim as sim

    real = sim.simulate

    def flaky(cfg):
        if cfg.seed == 1:
            raise sim.DivergenceError("state diverged", 0.1)
        return real(cfg)

    monkeypatch.setattr(sim, "simulate", flaky)
    path = tmp_path / "sweep.toml"
    path.write_text(SHORT + '\n[sweep]\nmodes = ["IIC_low"]\nseeds = [0, 1]\n')
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(path), "--out", str(out), "--workers", "1"]) == EXIT_RUNTIME
    assert "IIC_low-s1 failed" in capsys.readouterr().err
    assert (out / "IIC_low-s0.csv").is_file() and not (out / "IIC_low-s1.csv").exists()
    assert len((out / "metrics.csv").read_text().splitlines()) == 2


def test_metrics_command(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", str(scenario), "--out", str(out)])
    before = (out / "IIC_high-s0_metrics.csv").read_text()
    assert main(["metrics", "--record", str(out / "IIC_high-s0.csv"), "--config", str(scenario), "--out", str(tmp_path / "m")]) == 0
    again = (tmp_path / "m" / "metrics.csv").read_text().splitlines()
    assert again[0] == before.splitlines()[0]
    # the record CSV is rounded to 10 significant digits, so compare numerically
    a = [float(v) for v in before.splitlines()[1].split(",")[3:]]
    b = [float(v) for v in again[1].split(",")[3:]]
    assert np.allclose(a, b, rtol=1e-6)
    assert "cutoff" in capsys.readouterr().out


def test_calibrate_command(tmp_path, capsys):
    g = synthesize_gait()
    human = save_gait_csv(g, tmp_path / "human.csv")
    assert main(["calibrate", "--human", str(human), "--srl", str(human), "--out", str(tmp_path / "c")]) == 0
    rows = (tmp_path / "c" / "mapping.csv").read_text().splitlines()
    C = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert np.allclose(C, np.eye(4), atol=1e-6)


def test_plot_and_svg_determinism(scenario, tmp_path):
    out = tmp_path / "out"
    main(["run", "--config", str(scenario), "--out", str(out)])
    record = str(out / "IIC_high-s0.csv")
    assert main(["plot", "--record", record, "--kind", "force", "--out", str(tmp_path / "p")]) == 0
    assert main(["plot", "--record", record, "--kind", "force", "--out", str(tmp_path / "q")]) == 0
    a = (tmp_path / "p" / "IIC_high-s0_force.svg").read_bytes()
    assert a == (tmp_path / "q" / "IIC_high-s0_force.svg").read_bytes()
    assert a.startswith(b"<svg") and a.rstrip().endswith(b"</svg>")
    assert main(["plot", "--record", record, "--kind", "pie", "--out", str(tmp_path)]) == EXIT_USAGE


def test_empty_record_plot_writes_nothing(tmp_path):
    with pytest.raises(PlotError):
        write_svg([{"t": np.array([])}], "trajectory", tmp_path / "x.svg")
    assert not (tmp_path / "x.svg").exists()
    with pytest.raises(PlotError):
        render_svg([], "force")
    with pytest.raises(PlotError):
        render_svg([{"t": np.arange(3.0)}], "force")


def test_svg_escapes_titles():
    rec = simulate(ScenarioConfig(mode="IIC_low", duration=0.05))
    text = render_svg([rec], "trajectory", titles=["a<b & c"])
    assert "a&lt;b &amp; c" in text


def test_train_classifier_command(tmp_path, fixtures_dir, capsys):
    data = fixtures_dir / "phase_dataset.csv"
    assert main(["train-classifier", "--data", str(data), "--out", str(tmp_path), "--epochs", "2"]) == 0
    assert (tmp_path / "classifier.bin").is_file()
    assert "accuracy" in capsys.readouterr().out
