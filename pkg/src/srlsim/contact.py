"""Spring-damper ground contact and ground-truth gait-phase labelling."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ConfigError


class GaitPhase(enum.IntEnum):
    SWING = 0
    CONTACT_MOMENT = 1
    STANCE = 2

    @property
    def code(self) -> str:
        return ("SW", "CM", "ST")[self.value]

    @classmethod
    def from_code(cls, code: str) -> "GaitPhase":
        try:
            return cls(("SW", "CM", "ST").index(code.strip().upper()))
        except ValueError:
            raise ValueError(f"unknown gait phase code {code!r}") from None


@dataclass(frozen=True)
class GroundModel:
    stiffness: float = 2.0e4
    damping: float = 300.0
    ground_height: float = 0.0
    friction_coeff: float = 0.0
    belt_speed: float = 0.0  # treadmill belt velocity along +x, m/s
    slip_velocity_scale: float = 0.01  # m/s, regularises Coulomb friction near zero slip

    def validate(self) -> "GroundModel":
        if not (math.isfinite(self.stiffness) and self.stiffness > 0):
            raise ConfigError("ground.stiffness must be > 0")
        if not (math.isfinite(self.damping) and self.damping >= 0):
            raise ConfigError("ground.damping must be >= 0")
        if not (math.isfinite(self.friction_coeff) and self.friction_coeff >= 0):
            raise ConfigError("ground.friction_coeff must be >= 0")
        if not (self.slip_velocity_scale > 0):
            raise ConfigError("ground.slip_velocity_scale must be > 0")
        return self


@dataclass(frozen=True)
class ContactState:
    foot_height: float
    foot_velocity: float
    grf: float
    grf_tangential: float
    in_contact: bool


@dataclass(frozen=True)
class PhaseThresholds:
    contact: float = 5.0  # N
    stance: float = 60.0  # N
    rise_rate: float = 100.0  # N/s; a rising force must exceed this to count as CM

    @classmethod
    def from_expected_peak(cls, expected_peak: float, contact: float = 5.0, rise_rate: float = 100.0):
        return cls(contact=contact, stance=0.3 * expected_peak, rise_rate=rise_rate)

    def validate(self) -> "PhaseThresholds":
        if not (0 < self.contact < self.stance):
            raise ConfigError("phase thresholds need 0 < contact < stance")
        if self.rise_rate < 0:
            raise ConfigError("phase.rise_rate must be >= 0")
        return self


def ground_reaction(
    ground: GroundModel, foot_height: float, foot_velocity: float, slip_velocity: float = 0.0
) -> ContactState:
    """Unilateral spring-damper reaction.

    Normal force is ``max(0, k*pen + c*d(pen)/dt)`` with ``pen = ground_height - foot_height``;
    the damper only acts while penetrating and can never pull the foot down.
    ``slip_velocity`` is the foot's horizontal speed relative to the belt.
    """
    penetration = ground.ground_height - foot_height
    if penetration <= 0.0:
        return ContactState(foot_height, foot_velocity, 0.0, 0.0, False)
    grf = ground.stiffness * penetration - ground.damping * foot_velocity
    if grf < 0.0:
        grf = 0.0
    tangential = 0.0
    if ground.friction_coeff > 0.0 and grf > 0.0:
        tangential = -ground.friction_coeff * grf * math.tanh(slip_velocity / ground.slip_velocity_scale)
    return ContactState(foot_height, foot_velocity, grf, tangential, True)


def label_phase(contact: ContactState, grf_rate: float, thresholds: PhaseThresholds) -> GaitPhase:
    """Ground-truth phase from the normal force and its rate.

    Below the contact threshold the leg is swinging; at or above the stance
    threshold it is loaded.  In between, a force that is still climbing faster
    than ``rise_rate`` marks the contact moment, anything else (plateau or
    unloading before lift-off) counts as stance.
    """
    grf = contact.grf
    if grf < thresholds.contact:
        return GaitPhase.SWING
    if grf >= thresholds.stance:
        return GaitPhase.STANCE
    if grf_rate > thresholds.rise_rate:
        return GaitPhase.CONTACT_MOMENT
    return GaitPhase.STANCE
