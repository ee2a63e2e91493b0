import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srlsim.contact import ContactState, GaitPhase, GroundModel, PhaseThresholds, ground_reaction, label_phase
from srlsim.errors import ConfigError


def test_no_penetration_no_force():
    c = ground_reaction(GroundModel(), 0.0, -1.0)
    assert c.grf == 0.0 and not c.in_contact


def test_spring_force():
    c = ground_reaction(GroundModel(stiffness=1e4, damping=100.0), -0.01, 0.0)
    assert c.grf == pytest.approx(100.0)
    assert c.in_contact


def test_withdrawal_never_pulls():
    c = ground_reaction(GroundModel(stiffness=1e4, damping=100.0), -0.001, 5.0)
    assert c.grf == 0.0


def test_damper_resists_penetration_rate():
    g = GroundModel(stiffness=1e4, damping=100.0)
    assert ground_reaction(g, -0.01, -0.5).grf == pytest.approx(150.0)


def test_friction_capped_by_normal_force():
    g = GroundModel(friction_coeff=0.8)
    c = ground_reaction(g, -0.005, 0.0, slip_velocity=10.0)
    assert abs(c.grf_tangential) <= 0.8 * c.grf + 1e-12
    assert c.grf_tangential < 0


@given(st.floats(-0.1, 0.1), st.floats(-5, 5), st.floats(1.0, 1e5), st.floats(0.0, 1e3))
@settings(max_examples=200)
def test_unilateral(height, velocity, k, c):
    state = ground_reaction(GroundModel(stiffness=k, damping=c), height, velocity)
    assert state.grf >= 0.0
    assert state.in_contact == (height < 0.0)


def test_ground_validation():
    with pytest.raises(ConfigError):
        GroundModel(stiffness=0.0).validate()
    with pytest.raises(ConfigError):
        GroundModel(damping=-1.0).validate()
    with pytest.raises(ConfigError):
        PhaseThresholds(contact=10.0, stance=5.0).validate()


def _state(grf):
    return ContactState(0.0, 0.0, grf, 0.0, grf > 0)


def test_phase_examples():
    th = PhaseThresholds(contact=5.0, stance=120.0)
    assert label_phase(_state(0.0), 0.0, th) is GaitPhase.SWING
    assert label_phase(_state(30.0), 800.0, th) is GaitPhase.CONTACT_MOMENT
    assert label_phase(_state(300.0), 0.0, th) is GaitPhase.STANCE


def test_unloading_below_stance_threshold_is_stance():
    th = PhaseThresholds(contact=5.0, stance=120.0)
    assert label_phase(_state(30.0), -500.0, th) is GaitPhase.STANCE


def test_expected_peak_threshold():
    assert PhaseThresholds.from_expected_peak(200.0).stance == pytest.approx(60.0)


def test_phase_codes_round_trip():
    for p in GaitPhase:
        assert GaitPhase.from_code(p.code) is p
    with pytest.raises(ValueError):
        GaitPhase.from_code("XX")


@given(st.floats(0.5, 0.8), st.floats(40.0, 400.0), st.integers(60, 200))
@settings(max_examples=50)
def test_step_phase_order(duty, peak, n):
    """A smooth load/unload bump is labelled SW, CM, ST, SW; swing never jumps straight to stance."""
    th = PhaseThresholds(contact=5.0, stance=0.3 * peak, rise_rate=10.0)
    dt = 0.01
    t = np.arange(n + 40) * dt
    t0, span = 0.2, duty * n * dt
    x = np.clip((t - t0) / span, 0.0, 1.0)
    grf = peak * np.sin(np.pi * x) ** 2
    labels = []
    prev = 0.0
    for f in grf:
        labels.append(label_phase(_state(f), (f - prev) / dt, th))
        prev = f
    runs = [k for k, _ in itertools.groupby(labels)]
    assert runs == [GaitPhase.SWING, GaitPhase.CONTACT_MOMENT, GaitPhase.STANCE, GaitPhase.SWING]
