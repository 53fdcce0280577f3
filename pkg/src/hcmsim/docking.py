"""Magnetic docking: rotor polarity, the face wrench, capture and release.

Each active face carries a rotor holding the docking magnets. Turning it by
90 degrees reverses the effective polarity, so a bonded pair starts to repel
once the rotor passes 45 degrees. The same force law drives the compiled
kernel; the functions here are the object-level view of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from . import kernel as K
from .dynamics import WorldState, merge_bodies, world_to_engine
from .engine import Engine
from .errors import AlreadyReleasing, FaceBonded, UnknownBond
from .params import MagnetModel, PhysicalConstants, pack_params

__all__ = [
    "RotorState",
    "Face",
    "Bond",
    "MagnetModel",
    "Wrench",
    "polarity_sign",
    "magnet_wrench",
    "try_capture",
    "Docking",
]

ROTOR_MIN = 0.0
ROTOR_MAX = 90.0


@dataclass(frozen=True)
class RotorState:
    angle: float = 0.0
    target_angle: float = 0.0
    slew_rate: float = 1800.0  # deg/s

    def __post_init__(self):
        if self.target_angle not in (ROTOR_MIN, ROTOR_MAX):
            raise ValueError("rotor target must be 0 or 90 degrees")

    def advance(self, dt: float) -> "RotorState":
        angle = K.rotor_step(self.angle, self.target_angle, self.slew_rate * dt)
        return replace(self, angle=angle)

    def commanded(self, target: float) -> "RotorState":
        return replace(self, target_angle=float(target))

    @property
    def transit_time(self) -> float:
        return (ROTOR_MAX - ROTOR_MIN) / self.slew_rate


@dataclass(frozen=True)
class Face:
    owner: int
    index: int
    rotor: RotorState = RotorState()

    def __post_init__(self):
        if not 0 <= self.index < 4:
            raise ValueError("face index must be 0..3")

    @property
    def key(self) -> tuple[int, int]:
        return (self.owner, self.index)


@dataclass(frozen=True)
class Bond:
    face_a: tuple[int, int]
    face_b: tuple[int, int]
    formed_at: float = 0.0

    @classmethod
    def of(cls, i, ka, j, kb, formed_at=0.0) -> "Bond":
        a, b = (int(i), int(ka)), (int(j), int(kb))
        if b < a:
            a, b = b, a
        return cls(a, b, formed_at)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (*self.face_a, *self.face_b)

    def other(self, face: tuple[int, int]) -> tuple[int, int]:
        return self.face_b if tuple(face) == self.face_a else self.face_a


@dataclass(frozen=True)
class Wrench:
    force_a: tuple[float, float]
    torque_a: float
    force_b: tuple[float, float]
    torque_b: float
    point: tuple[float, float]
    strength: float


def _rotor_angle(r) -> float:
    return float(r.angle if isinstance(r, RotorState) else r)


def polarity_sign(rotor_a, rotor_b) -> float:
    """Polarity factor in [-1, 1]: +1 attract, -1 repel, 0 at quadrature."""
    return float(K.polarity(_rotor_angle(rotor_a), _rotor_angle(rotor_b)))


def _face_frame(pose, index, edge):
    x, y, h = pose
    return K.face_frame(float(x), float(y), float(h), int(index), edge)


def magnet_wrench(face_a: Face, face_b: Face, poses, model: MagnetModel | None = None,
                  constants: PhysicalConstants | None = None, centers=None) -> Wrench:
    """Force and torque on each body from the magnets of two facing faces.

    ``poses`` maps module id to ``(x, y, heading)``; ``centers`` optionally
    maps module id to its body's center of mass (default: the module center).
    """
    constants = constants or PhysicalConstants()
    params = pack_params(constants, model or MagnetModel())
    edge = constants.module_edge
    pa, pb = poses[face_a.owner], poses[face_b.owner]
    cax, cay, nax, nay = _face_frame(pa, face_a.index, edge)
    cbx, cby, nbx, nby = _face_frame(pb, face_b.index, edge)
    fx, fy, px, py, tau, strength = K.face_wrench(
        params, cax, cay, nax, nay, cbx, cby, nbx, nby,
        face_a.rotor.angle, face_b.rotor.angle)
    centers = centers or {}
    ca = centers.get(face_a.owner, pa[:2])
    cb = centers.get(face_b.owner, pb[:2])
    tb = (px - cb[0]) * fy - (py - cb[1]) * fx + tau
    ta = -((px - ca[0]) * fy - (py - ca[1]) * fx) - tau
    return Wrench((-fx, -fy), ta, (fx, fy), tb, (px, py), strength)


def capture_ready(face_a: Face, face_b: Face, poses, model: MagnetModel | None = None,
                  constants: PhysicalConstants | None = None) -> bool:
    constants = constants or PhysicalConstants()
    model = model or MagnetModel()
    edge = constants.module_edge
    cax, cay, nax, nay = _face_frame(poses[face_a.owner], face_a.index, edge)
    cbx, cby, nbx, nby = _face_frame(poses[face_b.owner], face_b.index, edge)
    cos_psi, psi, gap, lat, _nx, _ny = K.face_pair_geometry(cax, cay, nax, nay,
                                                            cbx, cby, nbx, nby)
    if cos_psi <= K.COS45 or gap < K.MIN_GAP_FRACTION * edge:
        return False
    if gap > model.snap_gap or abs(lat) > model.snap_lateral:
        return False
    if abs(psi) > math.radians(model.snap_angle_deg):
        return False
    s = polarity_sign(face_a.rotor, face_b.rotor) * math.cos(math.pi * lat / (0.5 * edge))
    return s > 0.0


def module_poses(world: WorldState, constants: PhysicalConstants | None = None) -> dict:
    """Module id -> (x, y, heading) for every module in ``world``."""
    eng = world_to_engine(world, constants)
    return {m: eng.module_pose(m) for b in world.bodies for m in b.modules}


def try_capture(face_a: Face, face_b: Face, world: WorldState,
                model: MagnetModel | None = None,
                constants: PhysicalConstants | None = None):
    """Bond two faces if they sit within the snap tolerances.

    Returns ``(bond, world)``; ``bond`` is None and ``world`` unchanged when
    the tolerances are not met, the faces repel, or either face is taken.
    """
    if face_a.owner == face_b.owner:
        return None, world
    for i, ka, j, kb in world.bonds:
        if (i, ka) in (face_a.key, face_b.key) or (j, kb) in (face_a.key, face_b.key):
            return None, world
    if world.body_of(face_a.owner) is world.body_of(face_b.owner):
        return None, world
    poses = module_poses(world, constants)
    if not capture_ready(face_a, face_b, poses, model, constants):
        return None, world
    bond = Bond.of(face_a.owner, face_a.index, face_b.owner, face_b.index, world.time)
    return bond, merge_bodies(world, bond, constants, model)


class Docking:
    """Rotor commands and bond bookkeeping for a live :class:`Engine`.

    The unbonded rest angle of a face is 0 unless avoidance is set; a
    deadlock toggle inverts it; a face that just released holds 90 until it
    has no IR link left.
    """

    def __init__(self, engine: Engine):
        self.engine = engine
        self.avoid: set[int] = set()
        self.toggled: set[int] = set()
        self.hold: set[int] = set()
        self.releasing: dict[tuple, tuple[int, int]] = {}  # bond -> initiating face
        self.release_started: dict[tuple, int] = {}

    # helpers ------------------------------------------------------------

    @staticmethod
    def _key(i, ka, j, kb) -> tuple:
        a, b = (i, ka), (j, kb)
        return (*a, *b) if a < b else (*b, *a)

    def is_bonded(self, i: int, k: int) -> bool:
        return self.engine.mbond[i, k] >= 0

    def rest_angle(self, f: int) -> float:
        angle = ROTOR_MAX if f in self.avoid else ROTOR_MIN
        if f in self.toggled:
            angle = ROTOR_MAX - angle
        if f in self.hold:
            angle = ROTOR_MAX
        return angle

    def _apply(self, f: int) -> None:
        i, k = divmod(f, 4)
        if not self.is_bonded(i, k):
            self.engine.rtarget[i, k] = self.rest_angle(f)

    # commands -----------------------------------------------------------

    def set_avoidance(self, module: int, face: int, enabled: bool) -> None:
        if self.is_bonded(module, face):
            raise FaceBonded(f"face ({module},{face}) is bonded")
        f = 4 * module + face
        if enabled:
            self.avoid.add(f)
        else:
            self.avoid.discard(f)
        self._apply(f)

    def toggle(self, module: int, face: int) -> None:
        """Deadlock resolution: rotate an unbonded face's rotor by 90 degrees."""
        if self.is_bonded(module, face):
            raise FaceBonded(f"face ({module},{face}) is bonded")
        f = 4 * module + face
        self.toggled ^= {f}
        self._apply(f)

    def clear(self, module: int, face: int) -> None:
        """Return a face to its default pose once it has no IR contact left."""
        f = 4 * module + face
        self.avoid.discard(f)
        self.toggled.discard(f)
        self.hold.discard(f)
        self._apply(f)

    def command_release(self, bond, initiating_face=None) -> None:
        i, ka, j, kb = bond.as_tuple() if isinstance(bond, Bond) else bond
        if self.engine.mbond[i, ka] != 4 * j + kb:
            raise UnknownBond(f"no bond between ({i},{ka}) and ({j},{kb})")
        key = self._key(i, ka, j, kb)
        if key in self.releasing:
            raise AlreadyReleasing(f"bond {key} is already releasing")
        m, k = initiating_face if initiating_face is not None else (i, ka)
        if (m, k) not in ((i, ka), (j, kb)):
            raise UnknownBond("initiating face is not part of the bond")
        self.releasing[key] = (m, k)
        self.release_started[key] = self.engine.tick
        self.engine.rtarget[m, k] = ROTOR_MAX

    # kernel events ------------------------------------------------------

    def capture(self, i, ka, j, kb) -> tuple[int, list[Bond]]:
        slot, formed = self.engine.merge(i, ka, j, kb)
        t = self.engine.tick * self.engine.constants.dt
        bonds = []
        for a, x, b, y in formed:
            for f in (4 * a + x, 4 * b + y):
                self.avoid.discard(f)
                self.toggled.discard(f)
                self.hold.discard(f)
            self.engine.rtarget[a, x] = ROTOR_MIN
            self.engine.rtarget[b, y] = ROTOR_MIN
            bonds.append(Bond.of(a, x, b, y, t))
        return slot, bonds

    def release(self, i, ka, j, kb) -> list[int]:
        """Destroy a bond whose polarity reversed and split the body."""
        key = self._key(i, ka, j, kb)
        init = self.releasing.pop(key, (i, ka))
        self.release_started.pop(key, None)
        slots = self.engine.split(i, ka, j, kb)
        f = 4 * init[0] + init[1]
        self.hold.add(f)
        self._apply(f)
        other = 4 * j + kb if init == (i, ka) else 4 * i + ka
        self._apply(other)
        return slots
