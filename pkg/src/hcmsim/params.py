"""Physical and magnetic constants, and their packing for the compiled kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import kernel as K


def _override(obj, overrides):
    if not overrides:
        return obj
    known = {f.name for f in fields(obj)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown {type(obj).__name__} keys: {sorted(unknown)}")
    return replace(obj, **overrides)


@dataclass(frozen=True)
class PhysicalConstants:
    """SI-unit constants of the module and platform."""

    module_edge: float = 0.050
    module_mass: float = 0.095
    arena_side: float = 0.400
    gravity: float = 9.81
    mu_static: float = 0.08
    mu_kinetic: float = 0.06
    restitution: float = 0.3
    dt: float = 0.001
    v_stick: float = 0.001
    corner_radius: float = 0.002
    yaw_terms: bool = True
    friction: bool = True
    body_collisions: bool = True

    def __post_init__(self):
        if not 0.0 <= self.mu_kinetic <= self.mu_static:
            raise ValueError("need 0 <= mu_kinetic <= mu_static")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if not 0.0 <= self.corner_radius < 0.5 * self.module_edge:
            raise ValueError("corner radius must be smaller than half the edge")

    def with_overrides(self, overrides: dict | None) -> "PhysicalConstants":
        return _override(self, overrides)

    @property
    def breakaway_force(self) -> float:
        """Static friction limit of a single module on a flat platform."""
        return self.mu_static * self.module_mass * self.gravity


@dataclass(frozen=True)
class MagnetModel:
    """Docking magnet force law and capture tolerances.

    The softening length ``g0`` is derived so that the pull at the edge of
    the capture range is ``capture_margin`` times a single module's static
    friction breakaway force.
    """

    f0: float = 8.5
    capture_range: float = 0.007
    falloff_exponent: float = 4.0
    align_torque_gain: float = 0.05
    repulsion_scale: float = 1.0
    capture_margin: float = 1.5
    snap_gap: float = 0.001
    snap_lateral: float = 0.005
    snap_angle_deg: float = 10.0
    slew_rate: float = 1800.0  # deg/s, 0 -> 90 in 50 ms

    def __post_init__(self):
        if self.f0 <= 0.0 or self.capture_range <= 0.0:
            raise ValueError("f0 and capture_range must be positive")
        if self.falloff_exponent <= 1.0:
            raise ValueError("falloff exponent must exceed 1")

    def with_overrides(self, overrides: dict | None) -> "MagnetModel":
        return _override(self, overrides)

    def softening(self, constants: PhysicalConstants) -> float:
        target = self.capture_margin * constants.breakaway_force
        ratio = (target / self.f0) ** (1.0 / self.falloff_exponent)
        return ratio * self.capture_range / (1.0 - ratio)


@dataclass(frozen=True)
class LinkTolerances:
    comm_range: float = 0.007
    comm_lateral: float = 0.005
    comm_angle_deg: float = 10.0


def pack_params(constants: PhysicalConstants, magnets: MagnetModel,
                links: LinkTolerances | None = None, magnets_on: bool = True) -> np.ndarray:
    links = links or LinkTolerances()
    p = np.zeros(K.N_PARAMS)
    p[K.P_EDGE] = constants.module_edge
    p[K.P_MASS] = constants.module_mass
    p[K.P_ARENA] = constants.arena_side
    p[K.P_G] = constants.gravity
    p[K.P_MU_S] = constants.mu_static
    p[K.P_MU_K] = constants.mu_kinetic
    p[K.P_REST] = constants.restitution
    p[K.P_DT] = constants.dt
    p[K.P_V_STICK] = constants.v_stick
    p[K.P_CORNER] = constants.corner_radius
    p[K.P_F0] = magnets.f0
    p[K.P_CAPTURE] = magnets.capture_range
    p[K.P_G0] = magnets.softening(constants)
    p[K.P_FALLOFF] = magnets.falloff_exponent
    p[K.P_ALIGN] = magnets.align_torque_gain
    p[K.P_REPULSE] = magnets.repulsion_scale
    p[K.P_SNAP_GAP] = magnets.snap_gap
    p[K.P_SNAP_LAT] = magnets.snap_lateral
    p[K.P_SNAP_ANG] = math.radians(magnets.snap_angle_deg)
    p[K.P_COMM_RANGE] = links.comm_range
    p[K.P_COMM_LAT] = links.comm_lateral
    p[K.P_COMM_ANG] = math.radians(links.comm_angle_deg)
    p[K.P_SLEW] = magnets.slew_rate
    p[K.P_YAW_TERMS] = 1.0 if constants.yaw_terms else 0.0
    p[K.P_MAGNETS] = 1.0 if magnets_on else 0.0
    p[K.P_FRICTION] = 1.0 if constants.friction else 0.0
    p[K.P_BODY_COLLIDE] = 1.0 if constants.body_collisions else 0.0
    return p
