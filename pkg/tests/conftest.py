from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from srlsim.contact import GroundModel
from srlsim.gait import GaitTrajectory
from srlsim.sim import ScenarioConfig, TorsoMotion

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def held_pose(hip=0.3, knee=0.5, n=110, dt=0.01):
    """A gait that holds one pose: constant angles, zero velocity."""
    t = dt * np.arange(n)
    return GaitTrajectory(t, np.tile([hip, knee], (n, 1)), np.zeros((n, 2)))


def free_space_config(**overrides) -> ScenarioConfig:
    """Exact-model run in the air: ground far below, torso still, no jitter, control at the physics rate."""
    cfg = ScenarioConfig(
        gait=held_pose(),
        ground=GroundModel(ground_height=-10.0),
        torso=TorsoMotion().static(),
        mode="IIC_high",
        dt_physics=1e-3,
        dt_control=1e-3,
        duration=2.0,
        init_jitter=0.0,
        torso_jitter=0.0,
        joint_limits=None,
        settle_time=0.0,
    )
    return replace(cfg, **overrides)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


ACCEPTANCE: dict = {}


def record_criterion(number, passed: bool, detail: str):
    """Store one acceptance verdict; the terminal summary prints them all."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[str(number)] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
