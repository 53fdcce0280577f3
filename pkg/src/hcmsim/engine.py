"""Mutable simulation state around the compiled kernel.

Bodies live in slots indexed by their smallest member module id, so slot
order never depends on construction order. Merges and splits are rare and
run here in Python; everything per-tick runs in :mod:`hcmsim.kernel`.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernel as K
from .errors import UnknownBond, WouldDisconnect
from .geometry import is_connected, rotate_cell
from .params import LinkTolerances, MagnetModel, PhysicalConstants, pack_params

FACE_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # N, E, S, W in the module frame
SQUARE_FRICTION_RADIUS = (math.sqrt(2.0) + math.log(1.0 + math.sqrt(2.0))) / 6.0
MAX_EVENTS = 64


def face_direction(face: int, module_rot: int) -> tuple[int, int]:
    return rotate_cell(FACE_DIRS[face], module_rot)


def face_for_direction(direction, module_rot: int) -> int:
    for k in range(4):
        if face_direction(k, module_rot) == tuple(direction):
            return k
    raise ValueError(f"{direction} is not a lattice direction")


class Engine:
    def __init__(self, n_modules: int, constants: PhysicalConstants | None = None,
                 magnets: MagnetModel | None = None, links: LinkTolerances | None = None,
                 magnets_on: bool = True):
        self.constants = constants or PhysicalConstants()
        self.magnets = magnets or MagnetModel()
        self.links = links or LinkTolerances()
        self.params = pack_params(self.constants, self.magnets, self.links, magnets_on)
        n = int(n_modules)
        self.n = n
        self.tick = 0
        self.mbody = np.arange(n, dtype=np.int64)
        self.mcell = np.zeros((n, 2), dtype=np.int64)
        self.mrot = np.zeros(n, dtype=np.int64)
        self.rotor = np.zeros((n, 4))
        self.rtarget = np.zeros((n, 4))
        self.mbond = -np.ones((n, 4), dtype=np.int64)
        self.bactive = np.zeros(max(n, 1), dtype=np.bool_)
        self.bpos = np.zeros((max(n, 1), 2))
        self.bth = np.zeros(max(n, 1))
        self.bvel = np.zeros((max(n, 1), 2))
        self.bw = np.zeros(max(n, 1))
        self.bmass = np.ones(max(n, 1))
        self.binert = np.ones(max(n, 1))
        self.bcom = np.zeros((max(n, 1), 2))
        self.breff = np.ones(max(n, 1))
        self.consent = np.zeros((4 * n, 4 * n), dtype=np.bool_)
        self.link_status = np.zeros((4 * n, 4 * n), dtype=np.int8)
        self.bond_formed_at: dict[tuple[int, int], int] = {}
        self._scratch_f = np.zeros((3, max(n, 1)))
        self._scratch_m = np.zeros((4, max(n, 1)))
        ncont = 4 * max(n, 1) + 4 * max(n, 1) * max(n, 1)
        self._cont_i = np.zeros((2, ncont), dtype=np.int64)
        self._cont_f = np.zeros((5, ncont))
        self.events = np.zeros((MAX_EVENTS, 5), dtype=np.int64)
        self._placed = np.zeros(n, dtype=np.bool_)

    # construction -------------------------------------------------------

    def place_module(self, module_id: int, x: float, y: float, heading: float = 0.0,
                     velocity=(0.0, 0.0), angular_velocity: float = 0.0) -> None:
        i = int(module_id)
        self.mbody[i] = i
        self.mcell[i] = (0, 0)
        self.mrot[i] = 0
        self.bactive[i] = True
        self.bpos[i] = (x, y)
        self.bth[i] = heading
        self.bvel[i] = velocity
        self.bw[i] = angular_velocity
        self._placed[i] = True
        self.refresh_body(i)

    def place_body(self, modules, cells, rots, x, y, heading=0.0, velocity=(0.0, 0.0),
                   angular_velocity=0.0) -> int:
        """Place a rigid group; (x, y) is its center of mass."""
        modules = [int(m) for m in modules]
        slot = min(modules)
        for m, c, r in zip(modules, cells, rots):
            self.mbody[m] = slot
            self.mcell[m] = c
            self.mrot[m] = int(r) % 4
            self._placed[m] = True
        self.bactive[slot] = True
        self.bpos[slot] = (x, y)
        self.bth[slot] = heading
        self.bvel[slot] = velocity
        self.bw[slot] = angular_velocity
        self.refresh_body(slot)
        return slot

    def members(self, slot: int) -> list[int]:
        return [i for i in range(self.n) if self.mbody[i] == slot and self._placed[i]]

    def refresh_body(self, slot: int) -> None:
        members = self.members(slot)
        edge = self.constants.module_edge
        m = self.constants.module_mass
        cells = self.mcell[members].astype(float) * edge
        com = cells.mean(axis=0)
        rho = cells - com
        r2 = (rho ** 2).sum(axis=1)
        self.bcom[slot] = com
        self.bmass[slot] = m * len(members)
        self.binert[slot] = float(np.sum(m * edge * edge / 6.0 + m * r2))
        self.breff[slot] = float(np.mean(np.sqrt(r2 + (SQUARE_FRICTION_RADIUS * edge) ** 2)))

    # kinematics ---------------------------------------------------------

    def module_pose(self, i: int) -> tuple[float, float, float]:
        b = self.mbody[i]
        edge = self.constants.module_edge
        c, s = math.cos(self.bth[b]), math.sin(self.bth[b])
        lx = self.mcell[i, 0] * edge - self.bcom[b, 0]
        ly = self.mcell[i, 1] * edge - self.bcom[b, 1]
        return (self.bpos[b, 0] + c * lx - s * ly,
                self.bpos[b, 1] + s * lx + c * ly,
                self.bth[b] + self.mrot[i] * K.HALF_PI)

    def face_frame(self, i: int, k: int):
        x, y, h = self.module_pose(i)
        return K.face_frame(x, y, h, k, self.constants.module_edge)

    def face_geometry(self, i, ka, j, kb):
        """(cos_psi, psi, gap, lateral, nx, ny) between face ka of i and kb of j."""
        cax, cay, nax, nay = self.face_frame(i, ka)
        cbx, cby, nbx, nby = self.face_frame(j, kb)
        return K.face_pair_geometry(cax, cay, nax, nay, cbx, cby, nbx, nby)

    def active_slots(self) -> list[int]:
        return [b for b in range(self.n) if self.bactive[b]]

    def body_size(self, slot: int) -> int:
        return len(self.members(slot))

    # time stepping ------------------------------------------------------

    def step_tilt(self, pitch: float, roll: float, yaw_rate: float = 0.0,
                  yaw_accel: float = 0.0) -> None:
        K.step_once(self.params, pitch, roll, yaw_rate, yaw_accel, self.n, self.mbody,
                    self.mcell, self.mrot, self.rotor, self.rtarget, self.mbond, self.bactive,
                    self.bpos, self.bth, self.bvel, self.bw, self.bmass, self.binert,
                    self.bcom, self.breff, self._scratch_f, self._scratch_m, self._cont_i,
                    self._cont_f)
        self.tick += 1

    def scan(self) -> tuple[bool, np.ndarray]:
        changed, nev = K.scan(self.params, self.n, self.mbody, self.mcell, self.mrot,
                              self.rotor, self.rtarget, self.mbond, self.bpos, self.bth, self.bcom,
                              self.consent, self.link_status, self._scratch_m, self.events,
                              MAX_EVENTS)
        return changed, self.events[:min(nev, MAX_EVENTS)].copy()

    def advance(self, traj_arrays, nmax: int, stop_on_links: bool = True):
        """Run up to ``nmax`` ticks; returns (ticks, flags, events)."""
        tt, tp, tr, ty = traj_arrays
        done, flags, nev = K.run(self.params, tt, tp, tr, ty, self.tick, int(nmax),
                                 stop_on_links, self.n, self.mbody, self.mcell, self.mrot,
                                 self.rotor, self.rtarget, self.mbond, self.bactive,
                                 self.bpos, self.bth, self.bvel, self.bw, self.bmass,
                                 self.binert, self.bcom, self.breff, self.consent,
                                 self.link_status, self._scratch_f, self._scratch_m,
                                 self._cont_i, self._cont_f, self.events)
        self.tick += int(done)
        return int(done), int(flags), self.events[:nev].copy()

    # bonds --------------------------------------------------------------

    def bonds(self) -> list[tuple[int, int, int, int]]:
        out = []
        for i in range(self.n):
            for k in range(4):
                f = self.mbond[i, k]
                if f >= 0 and 4 * i + k < f:
                    out.append((i, k, int(f) // 4, int(f) % 4))
        return out

    def _link(self, i, ka, j, kb):
        self.mbond[i, ka] = 4 * j + kb
        self.mbond[j, kb] = 4 * i + ka
        key = (4 * i + ka, 4 * j + kb) if 4 * i + ka < 4 * j + kb else (4 * j + kb, 4 * i + ka)
        self.bond_formed_at[key] = self.tick

    def _unlink(self, i, ka, j, kb):
        self.mbond[i, ka] = -1
        self.mbond[j, kb] = -1
        key = (4 * i + ka, 4 * j + kb) if 4 * i + ka < 4 * j + kb else (4 * j + kb, 4 * i + ka)
        self.bond_formed_at.pop(key, None)

    def _move_slot(self, src: int, dst: int) -> None:
        if src == dst:
            return
        for arr in (self.bpos, self.bth, self.bvel, self.bw, self.bmass, self.binert,
                    self.bcom, self.breff):
            arr[dst] = arr[src]
        self.bactive[dst] = True
        self.bactive[src] = False
        for i in range(self.n):
            if self.mbody[i] == src:
                self.mbody[i] = dst

    def merge(self, i: int, ka: int, j: int, kb: int) -> tuple[int, list]:
        """Bond face ka of module i to face kb of module j and fuse their bodies.

        The body with more modules keeps its pose; the other is snapped onto
        the lattice next to it. Returns (slot, bonds formed).
        """
        bi, bj = int(self.mbody[i]), int(self.mbody[j])
        if bi == bj:
            raise ValueError("modules already share a body")
        ni, nj = self.body_size(bi), self.body_size(bj)
        if nj > ni or (nj == ni and bj < bi):
            i, ka, j, kb = j, kb, i, ka
            bi, bj = bj, bi
        keep_members = self.members(bi)
        move_members = self.members(bj)

        # momentum bookkeeping before snapping
        mi, mj = self.bmass[bi], self.bmass[bj]
        mtot = mi + mj
        p = mi * self.bvel[bi] + mj * self.bvel[bj]
        com = (mi * self.bpos[bi] + mj * self.bpos[bj]) / mtot
        ang = self.binert[bi] * self.bw[bi] + self.binert[bj] * self.bw[bj]
        for b, m in ((bi, mi), (bj, mj)):
            r = self.bpos[b] - com
            ang += m * (r[0] * self.bvel[b, 1] - r[1] * self.bvel[b, 0])

        da = face_direction(ka, self.mrot[i])
        cell_j = (self.mcell[i, 0] + da[0], self.mcell[i, 1] + da[1])
        db = face_direction(kb, self.mrot[j])
        want = (-da[0], -da[1])
        q = next(k for k in range(4) if rotate_cell(db, k) == want)
        anchor = (int(self.mcell[j, 0]), int(self.mcell[j, 1]))
        for m in move_members:
            rel = (int(self.mcell[m, 0]) - anchor[0], int(self.mcell[m, 1]) - anchor[1])
            c = rotate_cell(rel, q)
            self.mcell[m] = (c[0] + cell_j[0], c[1] + cell_j[1])
            self.mrot[m] = (self.mrot[m] + q) % 4
            self.mbody[m] = bi
        self.bactive[bj] = False

        th = self.bth[bi]
        c, s = math.cos(th), math.sin(th)
        origin = self.bpos[bi] - np.array([c * self.bcom[bi, 0] - s * self.bcom[bi, 1],
                                           s * self.bcom[bi, 0] + c * self.bcom[bi, 1]])
        self.refresh_body(bi)
        self.bpos[bi] = origin + np.array([c * self.bcom[bi, 0] - s * self.bcom[bi, 1],
                                           s * self.bcom[bi, 0] + c * self.bcom[bi, 1]])
        self.bvel[bi] = p / mtot
        self.bw[bi] = ang / self.binert[bi]

        formed = [(i, ka, j, kb)]
        self._link(i, ka, j, kb)
        # every other coincident face pair across the seam bonds too
        cells = {(int(self.mcell[m, 0]), int(self.mcell[m, 1])): m for m in keep_members}
        for m in move_members:
            for k in range(4):
                if self.mbond[m, k] >= 0:
                    continue
                d = face_direction(k, self.mrot[m])
                other = cells.get((int(self.mcell[m, 0]) + d[0], int(self.mcell[m, 1]) + d[1]))
                if other is None:
                    continue
                ko = face_for_direction((-d[0], -d[1]), self.mrot[other])
                if self.mbond[other, ko] >= 0:
                    continue
                self._link(other, ko, m, k)
                formed.append((other, ko, m, k))

        slot = min(bi, bj)
        self._move_slot(bi, slot)
        return slot, formed

    def split(self, i: int, ka: int, j: int, kb: int) -> list[int]:
        """Remove a bond; if the body falls apart, give each part its own slot.

        Returns the slots of the resulting bodies (one slot if still connected).
        """
        if self.mbond[i, ka] != 4 * j + kb:
            raise UnknownBond(f"no bond between ({i},{ka}) and ({j},{kb})")
        slot = int(self.mbody[i])
        members = self.members(slot)
        self._unlink(i, ka, j, kb)
        parts = []
        seen = set()
        for start in sorted(members):
            if start in seen:
                continue
            comp = {start}
            stack = [start]
            while stack:
                m = stack.pop()
                for k in range(4):
                    f = self.mbond[m, k]
                    if f >= 0 and int(f) // 4 not in comp:
                        comp.add(int(f) // 4)
                        stack.append(int(f) // 4)
            seen |= comp
            parts.append(sorted(comp))
        if len(parts) == 1:
            return [slot]
        for comp in parts:
            if not is_connected((int(self.mcell[m, 0]), int(self.mcell[m, 1])) for m in comp):
                raise WouldDisconnect("bond graph component has a disconnected footprint")

        th = self.bth[slot]
        c, s = math.cos(th), math.sin(th)
        pos = self.bpos[slot].copy()
        vel = self.bvel[slot].copy()
        w = float(self.bw[slot])
        com = self.bcom[slot].copy()
        origin = pos - np.array([c * com[0] - s * com[1], s * com[0] + c * com[1]])
        slots = []
        for comp in parts:
            new = min(comp)
            for m in comp:
                self.mbody[m] = new
            self.bactive[new] = True
            self.bth[new] = th
            self.refresh_body(new)
            pc = origin + np.array([c * self.bcom[new, 0] - s * self.bcom[new, 1],
                                    s * self.bcom[new, 0] + c * self.bcom[new, 1]])
            self.bpos[new] = pc
            r = pc - pos
            self.bvel[new] = vel + w * np.array([-r[1], r[0]])
            self.bw[new] = w
            slots.append(new)
        return slots

    # energy and momentum ------------------------------------------------

    def kinetic_energy(self) -> float:
        e = 0.0
        for b in self.active_slots():
            e += 0.5 * self.bmass[b] * float(self.bvel[b] @ self.bvel[b])
            e += 0.5 * self.binert[b] * self.bw[b] ** 2
        return e

    def momentum(self) -> np.ndarray:
        p = np.zeros(2)
        for b in self.active_slots():
            p += self.bmass[b] * self.bvel[b]
        return p

    def angular_momentum(self, about=(0.0, 0.0)) -> float:
        total = 0.0
        for b in self.active_slots():
            r = self.bpos[b] - np.asarray(about)
            total += self.binert[b] * self.bw[b]
            total += self.bmass[b] * (r[0] * self.bvel[b, 1] - r[1] * self.bvel[b, 0])
        return float(total)
