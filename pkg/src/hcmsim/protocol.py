"""Per-module distributed controller: IR links, frames and the singleton rule.

A controller sees only its own state and the frames arriving on its faces.
Each assembly shares a lattice frame; ``anchor`` is a module's cell and
quarter-turn rotation in it. When two assemblies bond, the one with the
smaller id keeps its frame and the other re-expresses itself in it.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

from . import kernel as K
from .dynamics import world_to_engine
from .engine import Engine, face_direction
from .errors import CellNotAdjacent, InconsistentShapes, StaleFrame
from .geometry import TargetAssembly, canonicalize, exact_cover, grow_options, is_connected, neighbors, rotate_cell
from .params import LinkTolerances, PhysicalConstants

__all__ = [
    "Mode",
    "LinkStatus",
    "IrLink",
    "Frame",
    "ControllerState",
    "BatteryModel",
    "ProtocolConfig",
    "Decision",
    "link_scan",
    "emit_frame",
    "on_approach",
    "on_bond",
    "on_flood",
    "on_unbond",
    "on_deadlock",
    "on_separated",
    "tick_battery",
]

IDLE_LIFETIME = 90 * 60.0  # s


class Mode(str, Enum):
    FREE = "FREE"
    MEMBER = "MEMBER"
    COMPLETE = "COMPLETE"
    RELEASING = "RELEASING"
    DEADLOCK = "DEADLOCK"


class LinkStatus(IntEnum):
    NONE = K.LINK_NONE
    ALIGNED = K.LINK_ALIGNED
    CROSSED = K.LINK_CROSSED


class Decision(str, Enum):
    DOCK = "DOCK"
    AVOID = "AVOID"


@dataclass(frozen=True)
class ProtocolConfig:
    handshake_latency: int = 2  # ticks
    deadlock_ticks: int = 20
    # an incomplete assembly that has not changed for stall_timeout * size
    # seconds sheds one leaf module; None disables shedding
    stall_timeout: float | None = 20.0


@dataclass(frozen=True)
class BatteryModel:
    capacity: float = 2886.0  # J
    idle_power: float = 2886.0 / IDLE_LIFETIME  # W
    servo_energy_per_release: float = 0.05  # J
    tx_energy_per_frame: float = 1e-5  # J

    def __post_init__(self):
        if self.capacity < 0 or self.idle_power < 0:
            raise ValueError("battery capacity and idle power must be non-negative")

    @property
    def lifetime(self) -> float:
        return math.inf if self.idle_power == 0 else self.capacity / self.idle_power

    def depletion_tick(self, spent: float, dt: float) -> int | None:
        """First tick at which an idle module with ``spent`` event energy is empty."""
        left = self.capacity - spent
        if left <= 0:
            return 0
        if self.idle_power == 0:
            return None
        return max(0, math.ceil(left / (self.idle_power * dt) - 1e-9))


@dataclass(frozen=True)
class IrLink:
    face_a: tuple[int, int]
    face_b: tuple[int, int]
    status: LinkStatus
    latency: int = 2


def _checksum(fields: tuple) -> int:
    return zlib.crc32(json.dumps(fields, separators=(",", ":")).encode())


@dataclass(frozen=True)
class Frame:
    src_module: int
    src_face: int
    assembly_id: int
    assembly_size: int
    shape: tuple  # cells of the sender's assembly, in its frame
    anchor: tuple  # (cell, quarter turns) of the sender in that frame
    seq: int
    mode: str = Mode.FREE.value
    checksum: int = 0

    def _fields(self) -> tuple:
        return (self.src_module, self.src_face, self.assembly_id, self.assembly_size,
                [list(c) for c in self.shape], [list(self.anchor[0]), self.anchor[1]],
                self.seq, self.mode)

    @classmethod
    def make(cls, **kw) -> "Frame":
        f = cls(**kw)
        return replace(f, checksum=_checksum(f._fields()))

    @property
    def valid(self) -> bool:
        return (self.checksum == _checksum(self._fields())
                and len(set(self.shape)) == self.assembly_size
                and tuple(self.anchor[0]) in self.shape)

    @property
    def canonical(self):
        return canonicalize(self.shape)


@dataclass(frozen=True)
class ControllerState:
    module_id: int
    target: TargetAssembly
    mode: Mode = Mode.FREE
    assembly_id: int = -1
    shape: frozenset = frozenset({(0, 0)})
    cell: tuple = (0, 0)
    rot: int = 0
    battery: float = 0.0
    seq: int = 0
    seen: tuple = ()  # ((module, last seq), ...)
    changed_at: int = 0  # tick of the last shape change
    resume_mode: Mode = Mode.FREE
    inert: bool = False

    @classmethod
    def initial(cls, module_id: int, target: TargetAssembly, battery: BatteryModel | None = None,
                tick: int = 0) -> "ControllerState":
        battery = battery or BatteryModel()
        mode = Mode.COMPLETE if target.node_count == 1 else Mode.FREE
        return cls(module_id, target, mode, module_id, frozenset({(0, 0)}), (0, 0), 0,
                   battery.capacity, 0, (), tick, mode, battery.capacity <= 0)

    @property
    def size(self) -> int:
        return len(self.shape)

    @property
    def canonical(self):
        return canonicalize(self.shape)

    def frame(self, face: int) -> Frame:
        """The frame this controller would send next on ``face``."""
        return Frame.make(src_module=self.module_id, src_face=face, assembly_id=self.assembly_id,
                          assembly_size=self.size, shape=tuple(sorted(self.shape)),
                          anchor=(tuple(self.cell), self.rot), seq=self.seq,
                          mode=self.mode.value)

    def last_seen(self, module: int) -> int:
        for m, s in self.seen:
            if m == module:
                return s
        return -1

    def _saw(self, frame: Frame) -> tuple:
        rest = tuple((m, s) for m, s in self.seen if m != frame.src_module)
        return tuple(sorted(rest + ((frame.src_module, frame.seq),)))


def emit_frame(state: ControllerState, face: int) -> tuple[ControllerState, Frame]:
    """Send a frame on ``face``; every transmission carries a fresh seq."""
    frame = state.frame(face)
    return replace(state, seq=state.seq + 1), frame


def _face_cell(cell, rot, face) -> tuple[int, int]:
    d = face_direction(face, rot)
    return (cell[0] + d[0], cell[1] + d[1])


def _rot_for(face: int, direction) -> int:
    return next(q for q in range(4) if face_direction(face, q) == tuple(direction))


# links ---------------------------------------------------------------------

def links_from_status(status, latency: int = 2) -> list[IrLink]:
    out = []
    n = status.shape[0]
    for fa in range(n):
        for fb in range(fa + 1, n):
            s = int(status[fa, fb])
            if s != K.LINK_NONE:
                out.append(IrLink(divmod(fa, 4), divmod(fb, 4), LinkStatus(s), latency))
    return out


def link_scan(world, constants: PhysicalConstants | None = None,
              tolerances: LinkTolerances | None = None) -> list[IrLink]:
    """IR link status of every face pair with any line of sight."""
    eng = world if isinstance(world, Engine) else world_to_engine(world, constants,
                                                                  links=tolerances)
    status = eng.link_status.copy()
    consent = np.zeros_like(eng.consent)
    K.scan(eng.params, eng.n, eng.mbody, eng.mcell, eng.mrot, eng.rotor, eng.rtarget,
           eng.mbond, eng.bpos, eng.bth, eng.bcom, consent, status, eng._scratch_m, eng.events.copy(),
           eng.events.shape[0])
    return links_from_status(status)


# decisions -----------------------------------------------------------------

def _check_fresh(state: ControllerState, frame: Frame) -> None:
    if frame.seq < state.last_seen(frame.src_module):
        raise StaleFrame(f"frame seq {frame.seq} from module {frame.src_module} regressed")


def accept_frame(state: ControllerState, frame: Frame) -> ControllerState:
    _check_fresh(state, frame)
    return replace(state, seen=state._saw(frame))


def rotates_on_avoid(state: ControllerState, frame: Frame) -> bool:
    """The larger assembly (tie: lower assembly id) turns its rotor to avoid."""
    if state.size != frame.assembly_size:
        return state.size > frame.assembly_size
    return state.assembly_id < frame.assembly_id


def landing_cell(state: ControllerState, own_face: int, frame: Frame):
    """(assembly shape, prospective cell of the singleton) for a one-singleton pair."""
    if state.size > 1:
        return state.shape, _face_cell(state.cell, state.rot, own_face)
    return frozenset(frame.shape), _face_cell(frame.anchor[0], frame.anchor[1], frame.src_face)


def on_approach(state: ControllerState, own_face: int, frame: Frame) -> Decision:
    """Singleton rule: accept only singletons whose landing keeps the shape embeddable."""
    _check_fresh(state, frame)
    if state.inert or not frame.valid:
        return Decision.AVOID
    if Mode.COMPLETE in (state.mode, Mode(frame.mode)):
        return Decision.AVOID
    if Mode.RELEASING in (state.mode, Mode(frame.mode)):
        return Decision.AVOID
    if state.assembly_id == frame.assembly_id:
        return Decision.AVOID
    sizes = (state.size, frame.assembly_size)
    if sizes == (1, 1):
        ok = state.target.node_count >= 2
    elif 1 in sizes:
        shape, cell = landing_cell(state, own_face, frame)
        try:
            ok = grow_options(shape, cell, state.target.embedding)
        except CellNotAdjacent:
            ok = False
    else:
        ok = False
    return Decision.DOCK if ok else Decision.AVOID


def _with_shape(state: ControllerState, shape, cell, rot, assembly_id, tick) -> ControllerState:
    shape = frozenset(shape)
    if len(shape) == 1:
        mode = Mode.FREE
    else:
        mode = Mode.MEMBER
    if exact_cover(shape, state.target.embedding):
        mode = Mode.COMPLETE
    return replace(state, shape=shape, cell=tuple(cell), rot=rot % 4, assembly_id=assembly_id,
                   mode=mode, resume_mode=mode, changed_at=tick)


def on_bond(state: ControllerState, own_face: int, frame: Frame, tick: int = 0) -> ControllerState:
    """Merge shape knowledge across a freshly formed bond on ``own_face``."""
    if frame.seq == state.last_seen(frame.src_module):
        return state
    _check_fresh(state, frame)
    peer_cell, peer_rot = tuple(frame.anchor[0]), frame.anchor[1]
    if state.assembly_id <= frame.assembly_id:
        # keep our frame; bring the peer's assembly into it
        d = face_direction(own_face, state.rot)
        new_peer_cell = (state.cell[0] + d[0], state.cell[1] + d[1])
        new_peer_rot = _rot_for(frame.src_face, (-d[0], -d[1]))
        q = new_peer_rot - peer_rot
        moved = {_transform(c, peer_cell, q, new_peer_cell) for c in frame.shape}
        if moved & state.shape:
            raise InconsistentShapes("bonded assemblies claim overlapping cells")
        shape, cell, rot = state.shape | moved, state.cell, state.rot
    else:
        d = face_direction(frame.src_face, peer_rot)
        new_cell = (peer_cell[0] + d[0], peer_cell[1] + d[1])
        new_rot = _rot_for(own_face, (-d[0], -d[1]))
        q = new_rot - state.rot
        moved = {_transform(c, state.cell, q, new_cell) for c in state.shape}
        if moved & set(frame.shape):
            raise InconsistentShapes("bonded assemblies claim overlapping cells")
        shape, cell, rot = set(frame.shape) | moved, new_cell, new_rot
    out = _with_shape(state, shape, cell, rot, min(state.assembly_id, frame.assembly_id), tick)
    return replace(out, seen=state._saw(frame))


def _transform(c, origin, q, dest):
    r = rotate_cell((c[0] - origin[0], c[1] - origin[1]), q)
    return (r[0] + dest[0], r[1] + dest[1])


def on_flood(state: ControllerState, own_face: int, frame: Frame, tick: int = 0) -> ControllerState:
    """Adopt a bonded neighbor's updated assembly view.

    A frame already seen (same or older seq) changes nothing.
    """
    if frame.seq == state.last_seen(frame.src_module) or not frame.valid:
        return state
    _check_fresh(state, frame)
    d = face_direction(frame.src_face, frame.anchor[1])
    cell = (frame.anchor[0][0] + d[0], frame.anchor[0][1] + d[1])
    if cell not in frame.shape:
        raise InconsistentShapes("flooded shape does not contain the receiver's cell")
    rot = _rot_for(own_face, (-d[0], -d[1]))
    if (frozenset(frame.shape) == state.shape and cell == state.cell
            and frame.assembly_id == state.assembly_id):
        return replace(state, seen=state._saw(frame))
    out = _with_shape(state, frame.shape, cell, rot, frame.assembly_id, tick)
    return replace(out, seen=state._saw(frame))


def on_unbond(state: ControllerState, own_face: int, tick: int = 0,
              assembly_id: int | None = None) -> ControllerState:
    """Drop the module across ``own_face`` and keep the part still holding us."""
    lost = _face_cell(state.cell, state.rot, own_face)
    rest = set(state.shape) - {lost}
    part = {state.cell}
    stack = [state.cell]
    while stack:
        for n in neighbors(stack.pop()):
            if n in rest and n not in part:
                part.add(n)
                stack.append(n)
    aid = state.assembly_id if assembly_id is None else assembly_id
    return _with_shape(state, part, state.cell, state.rot, aid, tick)


def detach(state: ControllerState, tick: int = 0) -> ControllerState:
    """Become a free singleton after releasing every bond."""
    return _with_shape(state, {(0, 0)}, (0, 0), 0, state.module_id, tick)


def shed_candidate(shape) -> tuple[int, int] | None:
    """The leaf cell an incomplete assembly sheds when it stalls."""
    shape = set(shape)
    if len(shape) < 2:
        return None
    leaves = [c for c in shape if is_connected(shape - {c})]
    return max(leaves) if leaves else None


def begin_release(state: ControllerState) -> ControllerState:
    return replace(state, mode=Mode.RELEASING)


def on_deadlock(state: ControllerState, link: IrLink) -> tuple[ControllerState, bool]:
    """Enter DEADLOCK; returns (state, rotate) where the lower module id rotates."""
    mine = link.face_a if link.face_a[0] == state.module_id else link.face_b
    other = link.face_b if mine == link.face_a else link.face_a
    resume = state.resume_mode if state.mode == Mode.DEADLOCK else state.mode
    new = replace(state, mode=Mode.DEADLOCK, resume_mode=resume)
    return new, state.module_id < other[0]


def on_separated(state: ControllerState) -> ControllerState:
    if state.mode != Mode.DEADLOCK:
        return state
    return replace(state, mode=state.resume_mode)


def tick_battery(state: ControllerState, events=(), model: BatteryModel | None = None,
                 dt: float = 0.001, ticks: int = 1) -> ControllerState:
    """Drain idle power for ``ticks`` steps plus the cost of ``events``.

    ``events`` holds "release" (any rotor actuation) and "frame" (IR transmit)
    entries. A module that reaches zero becomes inert.
    """
    model = model or BatteryModel()
    if state.inert:
        return state
    cost = model.idle_power * dt * ticks
    for ev in events:
        if ev == "release":
            cost += model.servo_energy_per_release
        elif ev == "frame":
            cost += model.tx_energy_per_frame
        else:
            raise ValueError(f"unknown battery event {ev!r}")
    left = max(0.0, state.battery - cost)
    return replace(state, battery=left, inert=left <= 0.0)
