"""Scenario loading, seeded trials, batches, traces and replay.

One trial runs the fixed tick pipeline: trajectory sample, physics, IR
links, controllers, event application. The compiled kernel advances
physics until something the controllers care about happens (a link status
change, a capture or a bond break) or a timer falls due, so Python only
runs when there is protocol work to do.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernel as K
from .docking import Docking
from .engine import Engine
from .errors import DivergenceAt, FaceBonded, HcmError, ScenarioInvalid
from .geometry import NAMED_TARGETS, TargetAssembly, has_placement, load_target, named_target, target_from_json
from .params import LinkTolerances, MagnetModel, PhysicalConstants
from .platform import Trajectory, stochastic_trajectory, validate
from .protocol import (
    BatteryModel,
    ControllerState,
    Decision,
    IrLink,
    LinkStatus,
    Mode,
    ProtocolConfig,
    accept_frame,
    begin_release,
    detach,
    emit_frame,
    on_approach,
    on_bond,
    on_deadlock,
    on_flood,
    on_separated,
    on_unbond,
    rotates_on_avoid,
    shed_candidate,
)

log = logging.getLogger("hcmsim")

MAX_MODULES = 20
PLACEMENT_CLEARANCE = 0.001  # m kept free around each module at start


@lru_cache(maxsize=8)
def _stochastic(seed: int, duration: float, amp: float) -> Trajectory:
    return stochastic_trajectory(seed, duration, amp)


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    module_count: int = 2
    target: object = "line-2"
    trajectory: object = field(default_factory=lambda: {"builtin": "stochastic"})
    duration_cap: float = 5400.0
    initial_placement: object = "random"
    constants: dict = field(default_factory=dict)
    magnets: dict = field(default_factory=dict)
    battery: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    pose_sample_ms: float = 10.0
    base_dir: str = "."

    @classmethod
    def from_json(cls, data: dict, base_dir=".") -> "Scenario":
        known = {f for f in cls.__dataclass_fields__} - {"base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ScenarioInvalid(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_json(data, path.parent)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # resolution ---------------------------------------------------------

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def resolve_target(self) -> TargetAssembly:
        t = self.target
        try:
            if isinstance(t, dict):
                return target_from_json(t)
            if isinstance(t, str) and t in NAMED_TARGETS:
                return named_target(t)
            return load_target(self._path(t))
        except HcmError as exc:
            raise ScenarioInvalid(f"bad target: {exc}") from exc
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise ScenarioInvalid(f"bad target {t!r}: {exc}") from exc

    def resolve_trajectory(self) -> Trajectory:
        spec = self.trajectory
        try:
            if isinstance(spec, str):
                spec = {"file": spec}
            if "file" in spec:
                return validate(Trajectory.load(self._path(spec["file"])))
            kind = spec.get("builtin")
            if kind == "flat":
                return Trajectory.constant()
            if kind == "stochastic":
                seed = int(spec.get("seed", self.seed))
                duration = float(spec.get("duration", self.duration_cap))
                return _stochastic(seed, duration, float(spec.get("amp_deg", 12.0)))
        except HcmError as exc:
            raise ScenarioInvalid(f"bad trajectory: {exc}") from exc
        except (OSError, ValueError, TypeError) as exc:
            raise ScenarioInvalid(f"bad trajectory: {exc}") from exc
        raise ScenarioInvalid(f"unknown trajectory spec {self.trajectory!r}")

    def physics(self):
        try:
            constants = PhysicalConstants().with_overrides(self.constants)
            magnets = MagnetModel().with_overrides(self.magnets)
            battery = BatteryModel(**self.battery)
            proto = ProtocolConfig(**self.protocol)
        except (TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"bad override block: {exc}") from exc
        return constants, magnets, battery, proto

    def placements(self, constants: PhysicalConstants) -> list[tuple]:
        """(x, y, heading, vx, vy) per module."""
        n = self.module_count
        edge = constants.module_edge
        half = 0.5 * constants.arena_side
        radius = edge / math.sqrt(2.0)
        spec = self.initial_placement
        if spec == "random":
            rng = np.random.default_rng([int(self.seed), 0x5EED])
            lim = half - radius - 0.001
            out = []
            for _ in range(n):
                for _attempt in range(20000):
                    x, y = rng.uniform(-lim, lim, size=2)
                    h = float(rng.uniform(0.0, 2.0 * math.pi))
                    if all(not _squares_overlap((x, y, h), p[:3], edge + 2 * PLACEMENT_CLEARANCE)
                           for p in out):
                        out.append((float(x), float(y), h, 0.0, 0.0))
                        break
                else:
                    raise ScenarioInvalid("cannot place modules without overlap")
            return out
        if spec == "grid":
            side = int(constants.arena_side // (2 * edge))
            cells = [(ix, iy) for iy in range(side) for ix in range(side)][:n]
            if len(cells) < n:
                raise ScenarioInvalid("grid placement has too few cells")
            off = (side - 1) * edge
            return [(2 * edge * ix - off, 2 * edge * iy - off, 0.0, 0.0, 0.0) for ix, iy in cells]
        if isinstance(spec, list):
            if len(spec) != n:
                raise ScenarioInvalid("explicit placement count differs from module_count")
            try:
                out = [tuple(float(v) for v in p) + (0.0,) * (5 - len(p)) for p in spec]
            except (TypeError, ValueError) as exc:
                raise ScenarioInvalid(f"bad explicit placement: {exc}") from exc
            if any(len(p) != 5 for p in out) or any(len(p) < 2 for p in spec):
                raise ScenarioInvalid("placements are [x, y, heading?, vx?, vy?]")
            for k, (x, y, h, _vx, _vy) in enumerate(out):
                if max(abs(x), abs(y)) > half - 0.5 * edge:
                    raise ScenarioInvalid(f"module {k} starts outside the arena")
                for q in out[:k]:
                    if _squares_overlap((x, y, h), q[:3], edge):
                        raise ScenarioInvalid(f"module {k} overlaps another module")
            return out
        raise ScenarioInvalid(f"unknown initial_placement {spec!r}")

    def check(self):
        target = self.resolve_target()
        if not 1 <= self.module_count <= MAX_MODULES:
            raise ScenarioInvalid(f"module_count must be 1..{MAX_MODULES}")
        if self.module_count < target.node_count:
            raise ScenarioInvalid("fewer modules than target nodes")
        if self.duration_cap <= 0:
            raise ScenarioInvalid("duration_cap must be positive")
        constants, magnets, battery, proto = self.physics()
        return target, self.resolve_trajectory(), constants, magnets, battery, proto, \
            self.placements(constants)


def _squares_overlap(a, b, edge) -> bool:
    # separating axis test on two squares
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= edge * math.sqrt(2.0):
        return False
    corners = []
    for x, y, h in (a, b):
        c, s = math.cos(h), math.sin(h)
        e = 0.5 * edge
        corners.append([(x + c * u - s * v, y + s * u + c * v)
                        for u, v in ((e, e), (-e, e), (-e, -e), (e, -e))])
    for (x, y, h) in (a, b):
        for ang in (h, h + 0.5 * math.pi):
            ax, ay = math.cos(ang), math.sin(ang)
            pa = [px * ax + py * ay for px, py in corners[0]]
            pb = [px * ax + py * ay for px, py in corners[1]]
            if max(pa) <= min(pb) + 1e-12 or max(pb) <= min(pa) + 1e-12:
                return False
    return True


@dataclass
class TrialResult:
    seed: int
    success: bool
    completion_time: float | None
    failure_cause: str | None
    event_counts: dict
    ticks: int
    wall_time: float = 0.0
    trace: list | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d


class Simulation:
    """One trial's mutable state and tick loop."""

    def __init__(self, scenario: Scenario, record: bool = True):
        (self.target, self.trajectory, self.constants, self.magnets, self.battery,
         self.proto, placements) = scenario.check()
        self.scenario = scenario
        self.record = record
        n = scenario.module_count
        self.n = n
        self.dt = self.constants.dt
        self.eng = Engine(n, self.constants, self.magnets, LinkTolerances())
        for i, (x, y, h, vx, vy) in enumerate(placements):
            self.eng.place_module(i, x, y, h, velocity=(vx, vy))
        self.dock = Docking(self.eng)
        self.ctrl = [ControllerState.initial(i, self.target, self.battery) for i in range(n)]
        self.spent = [0.0] * n
        self.depletes = [self.battery.depletion_tick(0.0, self.dt) for _ in range(n)]
        self.arrays = self.trajectory.arrays()
        self.cap = int(round(scenario.duration_cap / self.dt))
        self.pose_every = max(1, int(round(scenario.pose_sample_ms / 1000.0 / self.dt)))
        self.handshakes: dict[tuple[int, int], int] = {}
        self.crossed: dict[tuple[int, int], int] = {}
        self.deadlock_due: dict[tuple[int, int], int] = {}
        self.deadlocked: set[tuple[int, int]] = set()
        self.prev_status = self.eng.link_status.copy()
        self.trace: list[str] = []
        self.counts: Counter = Counter()
        self.outcome: tuple | None = None

    # tracing ------------------------------------------------------------

    def emit(self, kind: str, **payload) -> None:
        self.counts[kind] += 1
        if kind == "pose-sample" and not self.record:
            return
        line = json.dumps({"tick": self.eng.tick, "kind": kind, **payload},
                          sort_keys=True, separators=(",", ":"))
        self.trace.append(line)

    def body_shapes(self, slots) -> list:
        out = []
        for b in sorted(set(int(s) for s in slots)):
            members = self.eng.members(b)
            out.append({"body": b, "modules": members,
                        "cells": sorted([int(self.eng.mcell[m, 0]), int(self.eng.mcell[m, 1])]
                                        for m in members)})
        return out

    def pose_sample(self) -> None:
        poses = [[b, float(self.eng.bpos[b, 0]), float(self.eng.bpos[b, 1]),
                  float(self.eng.bth[b])] for b in self.eng.active_slots()]
        self.emit("pose-sample", bodies=poses)

    # energy -------------------------------------------------------------

    def spend(self, module: int, joules: float) -> None:
        self.spent[module] += joules
        self.depletes[module] = self.battery.depletion_tick(self.spent[module], self.dt)

    def send(self, module: int, face: int):
        self.ctrl[module], frame = emit_frame(self.ctrl[module], face)
        self.spend(module, self.battery.tx_energy_per_frame)
        return frame

    def servo(self, module: int) -> None:
        self.spend(module, self.battery.servo_energy_per_release)

    # main loop ----------------------------------------------------------

    def run(self) -> TrialResult:
        t0 = time.perf_counter()
        self.emit("start", scenario=self.scenario.digest, seed=self.scenario.seed,
                  modules=self.n, target=self.target.to_json())
        if self.record:
            self.pose_sample()
        self.check_complete()
        while self.outcome is None:
            tick = self.eng.tick
            self.run_timers(tick)
            if self.outcome is not None:
                break
            if tick >= self.cap:
                self.finish(False, "timeout")
                break
            wake = max(tick + 1, min(self.cap, self.next_timer()))
            if self.record:
                wake = min(wake, (tick // self.pose_every + 1) * self.pose_every)
            _done, flags, events = self.eng.advance(self.arrays, wake - tick, True)
            self.after_physics(flags, events)
            if self.record and self.eng.tick % self.pose_every == 0:
                self.pose_sample()
        wall = time.perf_counter() - t0
        success, cause = self.outcome
        return TrialResult(self.scenario.seed, success,
                           self.eng.tick * self.dt if success else None,
                           None if success else cause, dict(sorted(self.counts.items())),
                           self.eng.tick, wall, self.trace)

    def finish(self, success: bool, cause: str | None) -> None:
        if self.outcome is not None:
            return
        self.outcome = (success, cause)
        self.emit("end", success=success, cause=cause)

    def check_complete(self) -> None:
        for c in self.ctrl:
            if c.mode == Mode.COMPLETE:
                self.emit("complete", assembly=c.assembly_id, module=c.module_id)
                self.finish(True, None)
                return

    def next_timer(self) -> int:
        due = [d for d in self.depletes if d is not None]
        due += list(self.handshakes.values()) + list(self.deadlock_due.values())
        stall = self.next_stall()
        if stall is not None:
            due.append(stall)
        return min(due) if due else self.cap

    def stall_ticks(self, size: int) -> int | None:
        if self.proto.stall_timeout is None:
            return None
        return int(round(self.proto.stall_timeout * size / self.dt))

    def next_stall(self) -> int | None:
        best = None
        for c in self.ctrl:
            if c.mode != Mode.MEMBER:
                continue
            span = self.stall_ticks(c.size)
            if span is None:
                return None
            if c.cell != shed_candidate(c.shape):
                continue
            t = c.changed_at + span
            best = t if best is None else min(best, t)
        return best

    def run_timers(self, tick: int) -> None:
        """Fire every timer due at ``tick``."""
        for m in range(self.n):
            d = self.depletes[m]
            if d is not None and d <= tick:
                self.emit("depletion", module=m)
                self.finish(False, "battery")
                return
        for pair in sorted(p for p, t in self.handshakes.items() if t <= tick):
            del self.handshakes[pair]
            self.handshake(*pair)
        for pair in sorted(p for p, t in self.deadlock_due.items() if t <= tick):
            del self.deadlock_due[pair]
            self.deadlock(*pair)
        stall = self.next_stall()
        if stall is not None and stall <= tick:
            self.shed(tick)

    # links --------------------------------------------------------------

    def after_physics(self, flags: int, events) -> None:
        tick = self.eng.tick
        ls = self.eng.link_status
        if flags & K.FLAG_LINKS:
            diff = np.argwhere(np.triu(ls != self.prev_status, 1))
            for fa, fb in diff:
                self.link_changed(int(fa), int(fb), int(self.prev_status[fa, fb]), int(ls[fa, fb]), tick)
            self.prev_status = ls.copy()
        for kind, i, ka, j, kb in events.tolist():
            if kind == K.EV_CAPTURE:
                self.capture(i, ka, j, kb)
            elif kind == K.EV_BREAK:
                self.bond_break(i, ka, j, kb)
            if self.outcome is not None:
                return
        if flags & K.FLAG_EVENTS:
            self.prev_status = self.eng.link_status.copy()

    def link_changed(self, fa: int, fb: int, old: int, new: int, tick: int) -> None:
        pair = (fa, fb)
        i, ka = divmod(fa, 4)
        j, kb = divmod(fb, 4)
        if new == K.LINK_ALIGNED:
            self.crossed.pop(pair, None)
            self.deadlock_due.pop(pair, None)
            if self.eng.mbond[i, ka] != fb:
                self.handshakes[pair] = tick + self.proto.handshake_latency
        elif new == K.LINK_CROSSED:
            self.handshakes.pop(pair, None)
            self.eng.consent[fa, fb] = self.eng.consent[fb, fa] = False
            if pair not in self.deadlocked:
                self.crossed[pair] = tick
                self.deadlock_due[pair] = tick + self.proto.deadlock_ticks - 1
        else:
            self.handshakes.pop(pair, None)
            self.crossed.pop(pair, None)
            self.deadlock_due.pop(pair, None)
            self.eng.consent[fa, fb] = self.eng.consent[fb, fa] = False
            if pair in self.deadlocked:
                self.deadlocked.discard(pair)
                self.ctrl[i] = on_separated(self.ctrl[i])
                self.ctrl[j] = on_separated(self.ctrl[j])
                self.emit("deadlock", faces=[[i, ka], [j, kb]], phase="separated")
            for f in (fa, fb):
                if not self.eng.link_status[f].any() and self.eng.mbond[f // 4, f % 4] < 0:
                    self.dock.clear(f // 4, f % 4)

    def decide(self, i, ka, j, kb, accept=True):
        fi = self.send(i, ka)
        fj = self.send(j, kb)
        di = on_approach(self.ctrl[i], ka, fj)
        dj = on_approach(self.ctrl[j], kb, fi)
        if accept:
            self.ctrl[i] = accept_frame(self.ctrl[i], fj)
            self.ctrl[j] = accept_frame(self.ctrl[j], fi)
        return di, dj, fi, fj

    def set_avoid(self, module: int, face: int, enabled: bool) -> None:
        f = 4 * module + face
        if (f in self.dock.avoid) == enabled:
            return
        try:
            self.dock.set_avoidance(module, face, enabled)
        except FaceBonded:
            return
        if enabled:
            self.servo(module)

    def handshake(self, fa: int, fb: int) -> None:
        if self.eng.link_status[fa, fb] != K.LINK_ALIGNED:
            return
        i, ka = divmod(fa, 4)
        j, kb = divmod(fb, 4)
        if self.eng.mbond[i, ka] >= 0 or self.eng.mbond[j, kb] >= 0:
            return
        if self.eng.mbody[i] == self.eng.mbody[j]:
            return
        if self.ctrl[i].inert or self.ctrl[j].inert:
            return
        di, dj, fi, fj = self.decide(i, ka, j, kb)
        if di == dj == Decision.DOCK:
            self.eng.consent[fa, fb] = self.eng.consent[fb, fa] = True
            self.set_avoid(i, ka, False)
            self.set_avoid(j, kb, False)
            self.emit("decision", faces=[[i, ka], [j, kb]], decision="DOCK")
            return
        self.eng.consent[fa, fb] = self.eng.consent[fb, fa] = False
        rot_i = rotates_on_avoid(self.ctrl[i], fj)
        mover, mface, other, oface = (i, ka, j, kb) if rot_i else (j, kb, i, ka)
        # exactly one face of the pair must rest at 90 degrees
        self.set_avoid(other, oface, False)
        other_rest = self.dock.rest_angle(4 * other + oface)
        self.set_avoid(mover, mface, other_rest == 0.0)
        self.emit("decision", faces=[[i, ka], [j, kb]], decision="AVOID", rotator=mover,
                  sizes=[self.ctrl[i].size, self.ctrl[j].size])

    def deadlock(self, fa: int, fb: int) -> None:
        pair = (fa, fb)
        if self.eng.link_status[fa, fb] != K.LINK_CROSSED or pair not in self.crossed:
            return
        onset = self.crossed.pop(pair)
        i, ka = divmod(fa, 4)
        j, kb = divmod(fb, 4)
        link = IrLink((i, ka), (j, kb), LinkStatus.CROSSED)
        self.ctrl[i], rot_i = on_deadlock(self.ctrl[i], link)
        self.ctrl[j], rot_j = on_deadlock(self.ctrl[j], link)
        order = [(i, ka), (j, kb)] if rot_i else [(j, kb), (i, ka)]
        rotator = None
        for m, k in order:
            if self.eng.mbond[m, k] < 0 and not self.ctrl[m].inert:
                self.dock.toggle(m, k)
                self.servo(m)
                rotator = m
                break
        self.deadlocked.add(pair)
        self.emit("deadlock", faces=[[i, ka], [j, kb]], phase="detected", onset=onset,
                  rotator=rotator)

    # bonds --------------------------------------------------------------

    def capture(self, i, ka, j, kb) -> None:
        eng = self.eng
        fa, fb = 4 * i + ka, 4 * j + kb
        if eng.mbond[i, ka] >= 0 or eng.mbond[j, kb] >= 0 or eng.mbody[i] == eng.mbody[j]:
            return
        if not eng.consent[fa, fb]:
            return
        # fresh frames at contact: the assemblies may have changed since the handshake
        di, dj, fi, fj = self.decide(i, ka, j, kb, accept=False)
        if not di == dj == Decision.DOCK:
            eng.consent[fa, fb] = eng.consent[fb, fa] = False
            self.handshakes[(fa, fb)] = eng.tick
            return
        sizes = [self.eng.body_size(int(eng.mbody[i])), self.eng.body_size(int(eng.mbody[j]))]
        slot, bonds = self.dock.capture(i, ka, j, kb)
        eng.consent[fa, fb] = eng.consent[fb, fa] = False
        self.emit("merge", bond=[i, ka, j, kb], bodies=self.body_shapes([slot]))
        for b in bonds:
            self.emit("bond", bond=list(b.as_tuple()), sizes=sizes)
        # protocol: each side merges the other's view, then floods its body
        ci = on_bond(self.ctrl[i], ka, fj, eng.tick)
        cj = on_bond(self.ctrl[j], kb, fi, eng.tick)
        self.ctrl[i], self.ctrl[j] = ci, cj
        self.flood([i, j])
        self.requeue_links(slot)
        self.check_complete()

    def flood(self, roots, skip=()) -> None:
        """Propagate the roots' assembly view hop by hop over bonded faces."""
        seen = set(roots) | set(skip)
        frontier = list(roots)
        hops = 0
        reached = []
        while frontier:
            nxt = []
            for m in frontier:
                for k in range(4):
                    f = int(self.eng.mbond[m, k])
                    if f < 0:
                        continue
                    n, kn = divmod(f, 4)
                    if n in seen:
                        continue
                    frame = self.send(m, k)
                    self.ctrl[n] = on_flood(self.ctrl[n], kn, frame, self.eng.tick)
                    seen.add(n)
                    nxt.append(n)
                    reached.append(n)
            frontier = nxt
            hops += 1 if nxt else 0
        c = self.ctrl[roots[0]]
        self.emit("flood", roots=list(roots), reached=reached, hops=hops,
                  assembly=c.assembly_id, size=c.size)

    def requeue_links(self, slot: int) -> None:
        """Members' views changed: re-run handshakes on their open links."""
        members = set(self.eng.members(slot))
        ls = self.eng.link_status
        for fa, fb in np.argwhere(np.triu(ls == K.LINK_ALIGNED, 1)).tolist():
            if fa // 4 in members or fb // 4 in members:
                if self.eng.mbond[fa // 4, fa % 4] == fb:
                    continue
                self.eng.consent[fa, fb] = self.eng.consent[fb, fa] = False
                self.handshakes[(fa, fb)] = self.eng.tick + self.proto.handshake_latency

    def shed(self, tick: int) -> None:
        for c in list(self.ctrl):
            if c.mode != Mode.MEMBER or c.cell != shed_candidate(c.shape):
                continue
            span = self.stall_ticks(c.size)
            if span is None or c.changed_at + span > tick:
                continue
            m = c.module_id
            self.ctrl[m] = begin_release(c)
            faces = [k for k in range(4) if self.eng.mbond[m, k] >= 0]
            for k in faces:
                f = int(self.eng.mbond[m, k])
                self.dock.command_release((m, k, f // 4, f % 4), (m, k))
                self.servo(m)
            self.emit("decision", module=m, decision="RELEASE", faces=faces,
                      assembly=c.assembly_id, size=c.size)

    def bond_break(self, i, ka, j, kb) -> None:
        eng = self.eng
        key = self.dock._key(i, ka, j, kb)
        started = self.dock.release_started.get(key)
        init = self.dock.releasing.get(key, (i, ka))
        slots = self.dock.release(i, ka, j, kb)
        self.emit("split", bond=[i, ka, j, kb], bodies=self.body_shapes(slots))
        self.emit("release", bond=[i, ka, j, kb], initiator=list(init),
                  elapsed=None if started is None else eng.tick - started)
        m, km = init
        n, kn = (j, kb) if init == (i, ka) else (i, ka)
        if not any(eng.mbond[m, k] >= 0 for k in range(4)):
            self.ctrl[m] = detach(self.ctrl[m], eng.tick)
        if self.ctrl[n].mode == Mode.RELEASING:
            return
        members = [x for x in eng.members(int(eng.mbody[n])) if self.ctrl[x].mode != Mode.RELEASING]
        aid = min(members)
        self.ctrl[n] = on_unbond(self.ctrl[n], kn, eng.tick, aid)
        skip = [x for x in range(self.n) if self.ctrl[x].mode == Mode.RELEASING]
        self.flood([n], skip)
        self.requeue_links(int(eng.mbody[n]))


def run_trial(scenario: Scenario, record: bool = True) -> TrialResult:
    """Run one trial; ``record`` keeps pose samples in the trace."""
    return Simulation(scenario, record).run()


def write_trace(result: TrialResult, path) -> None:
    Path(path).write_text("".join(line + "\n" for line in result.trace))


def read_trace(path) -> list[str]:
    return Path(path).read_text().splitlines()


def replay(trace, scenario: Scenario) -> dict:
    """Re-run ``scenario`` and compare event streams line by line."""
    lines = read_trace(trace) if isinstance(trace, (str, Path)) else list(trace)
    fresh = run_trial(scenario, record=any('"pose-sample"' in ln for ln in lines[:3])).trace
    for a, b in zip(lines, fresh):
        if a != b:
            ticks = [t for t in (_tick_of(a), _tick_of(b)) if t is not None]
            raise DivergenceAt(min(ticks, default=0), a, b)
    if len(lines) != len(fresh):
        k = min(len(lines), len(fresh))
        longer = lines if len(lines) > len(fresh) else fresh
        raise DivergenceAt(_tick_of(longer[k]) or 0, lines[k] if k < len(lines) else None,
                           fresh[k] if k < len(fresh) else None)
    return {"verified": True, "events": len(lines), "divergences": 0}


def _tick_of(line: str) -> int | None:
    try:
        return int(json.loads(line)["tick"])
    except (ValueError, KeyError, TypeError):
        return None


# batches -------------------------------------------------------------------

@dataclass
class Summary:
    results: list
    min_time: float | None
    max_time: float | None
    mean_time: float | None
    success_rate: float


def _trial_worker(args):
    scenario, record = args
    res = run_trial(scenario, record)
    res.trace = None
    return res


def run_batch(scenario: Scenario, attempts: int, seeds=None, workers: int = 1) -> Summary:
    if attempts < 1:
        raise ValueError("attempts must be at least 1")
    seeds = list(seeds) if seeds else [scenario.seed + k for k in range(attempts)]
    if len(seeds) < attempts:
        raise ValueError("fewer seeds than attempts")
    jobs = [(scenario.with_seed(s), False) for s in seeds[:attempts]]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_trial_worker, jobs))
    else:
        results = [_trial_worker(j) for j in jobs]
    results.sort(key=lambda r: r.seed)
    return aggregate(results)


def aggregate(results) -> Summary:
    times = [r.completion_time for r in results if r.success]
    rate = sum(r.success for r in results) / len(results) if results else 0.0
    return Summary(results, min(times) if times else None, max(times) if times else None,
                   float(np.mean(times)) if times else None, rate)


SUMMARY_FIELDS = ("row", "seed", "success", "completion_time", "failure_cause",
                  "min_time", "max_time", "mean_time", "success_rate")


def summarize(results) -> str:
    """CSV text: one row per trial plus an aggregate row."""
    results = list(results)
    if not results:
        raise ValueError("summarize needs at least one result")
    s = aggregate(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
    for r in sorted(results, key=lambda r: r.seed):
        w.writerow(["trial", r.seed, int(r.success), fmt(r.completion_time),
                    r.failure_cause or "", "", "", "", ""])
    w.writerow(["aggregate", "", "", "", "", fmt(s.min_time), fmt(s.max_time),
                fmt(s.mean_time), repr(float(s.success_rate))])
    return buf.getvalue()


# audit ---------------------------------------------------------------------

@dataclass
class AuditReport:
    unembeddable: list = field(default_factory=list)
    non_singleton_bonds: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)
    order_errors: list = field(default_factory=list)
    checked_shapes: int = 0
    checked_bonds: int = 0

    @property
    def ok(self) -> bool:
        return not (self.unembeddable or self.non_singleton_bonds or self.unmatched
                    or self.order_errors)


def audit_trace(lines, target: TargetAssembly | None = None) -> AuditReport:
    """Check the protocol safety invariants over a whole trace."""
    report = AuditReport()
    events = [json.loads(ln) for ln in lines]
    if target is None:
        start = next(e for e in events if e["kind"] == "start")
        target = target_from_json(start["target"])
    cells = frozenset(target.embedding)
    last = -1
    by_tick: dict[int, Counter] = {}
    for e in events:
        t = e["tick"]
        if t < last:
            report.order_errors.append(t)
        last = t
        kinds = by_tick.setdefault(t, Counter())
        kinds[e["kind"]] += 1
        if e["kind"] in ("merge", "split"):
            for body in e["bodies"]:
                report.checked_shapes += 1
                shape = [tuple(c) for c in body["cells"]]
                if not has_placement(shape, cells):
                    report.unembeddable.append((t, shape))
        if e["kind"] == "bond":
            report.checked_bonds += 1
            a, b = e["sizes"]
            if a >= 2 and b >= 2:
                report.non_singleton_bonds.append((t, e["bond"]))
    for t, kinds in by_tick.items():
        if kinds["bond"] and not kinds["merge"]:
            report.unmatched.append((t, "bond"))
        if kinds["release"] and kinds["split"] != kinds["release"]:
            report.unmatched.append((t, "release"))
    return report
