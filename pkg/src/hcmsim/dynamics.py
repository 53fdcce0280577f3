"""Planar rigid-body dynamics of modules on the tilting platform.

Value types (``TiltState``, ``BodyState``, ``WorldState``) and pure
operations over them. The pure operations build a throwaway
:class:`~hcmsim.engine.Engine`, so they share the compiled kernel with the
batch simulator and give bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernel as K
from .engine import Engine
from .errors import LimitExceeded, UnknownBond
from .params import MagnetModel, PhysicalConstants, pack_params

__all__ = [
    "PhysicalConstants",
    "TiltState",
    "BodyState",
    "WorldState",
    "in_plane_accel",
    "friction_force",
    "step",
    "merge_bodies",
    "split_body",
]

MAX_TILT = math.radians(45.0)
MAX_YAW = math.pi


@dataclass(frozen=True)
class TiltState:
    """Platform attitude in radians plus yaw rate (rad/s) and acceleration (rad/s^2)."""

    pitch: float = 0.0
    roll: float = 0.0
    yaw: float = 0.0
    yaw_rate: float = 0.0
    yaw_accel: float = 0.0

    def check(self) -> "TiltState":
        eps = 1e-12
        if abs(self.pitch) > MAX_TILT + eps or abs(self.roll) > MAX_TILT + eps:
            raise LimitExceeded(f"tilt ({self.pitch:.4f}, {self.roll:.4f}) rad beyond 45 deg")
        if abs(self.yaw) > MAX_YAW + eps:
            raise LimitExceeded(f"yaw {self.yaw:.4f} rad beyond 180 deg")
        return self


@dataclass(frozen=True)
class BodyState:
    """One rigid body. ``footprint`` holds ``(module_id, cell, quarter_turns)``
    with cells in the body's own lattice frame."""

    id: int
    position: tuple[float, float]
    heading: float
    velocity: tuple[float, float]
    angular_velocity: float
    footprint: tuple

    @property
    def modules(self) -> tuple[int, ...]:
        return tuple(m for m, _c, _r in self.footprint)


@dataclass(frozen=True)
class WorldState:
    time: float = 0.0
    tilt: TiltState = field(default_factory=TiltState)
    bodies: tuple = ()
    bonds: tuple = ()  # (module_a, face_a, module_b, face_b), module_a < module_b
    rotors: tuple = ()  # per module: (angles[4], targets[4]) in degrees

    def body_of(self, module_id: int) -> BodyState:
        for b in self.bodies:
            if module_id in b.modules:
                return b
        raise KeyError(module_id)

    @property
    def module_count(self) -> int:
        return sum(len(b.footprint) for b in self.bodies)


def single_module(module_id, x, y, heading=0.0, velocity=(0.0, 0.0), angular_velocity=0.0):
    return BodyState(module_id, (x, y), heading, tuple(velocity), angular_velocity,
                     ((module_id, (0, 0), 0),))


def world_to_engine(world: WorldState, constants=None, magnets=None, magnets_on=True,
                    links=None) -> Engine:
    n = max((m for b in world.bodies for m in b.modules), default=-1) + 1
    eng = Engine(n, constants, magnets, links, magnets_on=magnets_on)
    for b in world.bodies:
        mods = [m for m, _c, _r in b.footprint]
        cells = [c for _m, c, _r in b.footprint]
        rots = [r for _m, _c, r in b.footprint]
        eng.place_body(mods, cells, rots, b.position[0], b.position[1], b.heading,
                       b.velocity, b.angular_velocity)
    for i, (angles, targets) in enumerate(world.rotors):
        eng.rotor[i] = angles
        eng.rtarget[i] = targets
    for i, ka, j, kb in world.bonds:
        eng.mbond[i, ka] = 4 * j + kb
        eng.mbond[j, kb] = 4 * i + ka
    eng.tick = int(round(world.time / eng.constants.dt))
    return eng


def engine_to_world(eng: Engine, time: float, tilt: TiltState) -> WorldState:
    bodies = []
    for b in eng.active_slots():
        fp = tuple((m, (int(eng.mcell[m, 0]), int(eng.mcell[m, 1])), int(eng.mrot[m]))
                   for m in eng.members(b))
        bodies.append(BodyState(b, (float(eng.bpos[b, 0]), float(eng.bpos[b, 1])),
                                float(eng.bth[b]),
                                (float(eng.bvel[b, 0]), float(eng.bvel[b, 1])),
                                float(eng.bw[b]), fp))
    rotors = tuple((tuple(float(a) for a in eng.rotor[i]), tuple(float(a) for a in eng.rtarget[i]))
                   for i in range(eng.n))
    return WorldState(time, tilt, tuple(bodies), tuple(eng.bonds()), rotors)


def in_plane_accel(tilt: TiltState, position, velocity, constants: PhysicalConstants | None = None):
    """Gravity component in the platform plane plus rotating-frame pseudo-accelerations."""
    constants = constants or PhysicalConstants()
    tilt.check()
    params = pack_params(constants, MagnetModel())
    ax, ay = K.in_plane_accel(params, tilt.pitch, tilt.roll, tilt.yaw_rate, tilt.yaw_accel,
                              float(position[0]), float(position[1]),
                              float(velocity[0]), float(velocity[1]))
    return np.array([ax, ay])


def friction_force(normal_load: float, velocity, applied, constants: PhysicalConstants | None = None):
    """Coulomb friction force on a sliding or pinned body."""
    constants = constants or PhysicalConstants()
    if normal_load < 0:
        raise ValueError("normal load must be non-negative")
    v = np.asarray(velocity, dtype=float)
    f = np.asarray(applied, dtype=float)
    speed = float(np.hypot(*v))
    if speed < constants.v_stick and float(np.hypot(*f)) <= constants.mu_static * normal_load:
        return -f
    if speed > 0.0:
        direction = v / speed
    else:
        mag = float(np.hypot(*f))
        if mag == 0.0:
            return np.zeros(2)
        direction = f / mag
    return -constants.mu_kinetic * normal_load * direction


def step(world: WorldState, tilt_command: TiltState, constants: PhysicalConstants | None = None,
         magnets: MagnetModel | None = None) -> WorldState:
    """Advance the world by one time step under ``tilt_command``."""
    tilt_command.check()
    eng = world_to_engine(world, constants, magnets)
    eng.step_tilt(tilt_command.pitch, tilt_command.roll, tilt_command.yaw_rate,
                  tilt_command.yaw_accel)
    return engine_to_world(eng, world.time + eng.constants.dt, tilt_command)


def _bond_tuple(bond):
    if hasattr(bond, "face_a"):
        (i, ka), (j, kb) = bond.face_a, bond.face_b
    else:
        i, ka, j, kb = bond
    return int(i), int(ka), int(j), int(kb)


def merge_bodies(world: WorldState, bond, constants=None, magnets=None) -> WorldState:
    """Fuse the two bodies joined by ``bond`` into one momentum-conserving rigid body."""
    i, ka, j, kb = _bond_tuple(bond)
    eng = world_to_engine(world, constants, magnets)
    if eng.mbond[i, ka] >= 0 or eng.mbond[j, kb] >= 0:
        raise UnknownBond("bond faces are already bonded")
    if eng.mbody[i] == eng.mbody[j]:
        raise UnknownBond("bond endpoints already share a body")
    eng.merge(i, ka, j, kb)
    return engine_to_world(eng, world.time, world.tilt)


def split_body(world: WorldState, bond, constants=None, magnets=None) -> WorldState:
    """Remove ``bond``; parts no longer bond-connected become separate bodies."""
    i, ka, j, kb = _bond_tuple(bond)
    eng = world_to_engine(world, constants, magnets)
    if eng.mbond[i, ka] != 4 * j + kb:
        raise UnknownBond(f"no bond between ({i},{ka}) and ({j},{kb})")
    eng.split(i, ka, j, kb)
    return engine_to_world(eng, world.time, world.tilt)


def with_time(world: WorldState, time: float) -> WorldState:
    return replace(world, time=time)
