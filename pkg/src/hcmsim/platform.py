"""Actuation-platform trajectories and the hybrid-cube movement classes.

A trajectory is a list of timed (pitch, roll, yaw) waypoints, linearly
interpolated. ``validate`` decides membership in the permissible set,
``compile_scm`` builds exclusive pitch/roll pulses that slide free modules
exactly one lattice cell each, and ``classify`` decides the movement class
by running a reference simulation of non-interacting modules.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .dynamics import TiltState
from .engine import Engine
from .errors import (
    CalibrationMissing,
    LimitViolation,
    NonMonotonicTime,
    NoSolution,
    SlewViolation,
    TrajectoryError,
)
from .params import MagnetModel, PhysicalConstants

PITCH_LIMIT = 45.0
ROLL_LIMIT = 45.0
YAW_LIMIT = 180.0
DEFAULT_MAX_SLEW = 500.0  # deg/s per axis
DEFAULT_AMP_STOCH = 12.0
CSV_HEADER = ("t_ms", "pitch_deg", "roll_deg", "yaw_deg")

MOVES = {"N": (0, 1.0), "S": (0, -1.0), "E": (1, 1.0), "W": (1, -1.0)}  # axis, sign
MOVE_VECTORS = {"N": (1, 0), "S": (-1, 0), "E": (0, 1), "W": (0, -1)}  # platform x, y

SLIDE_RESIDUAL = 1e-3
SLIDE_HEADING = math.radians(1.0)
LEVEL_MIN_MS = 50.0
CLASSIFY_TAIL = 1.0  # s of holding the final waypoint
GRID_START_CELLS = ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class Trajectory:
    """Waypoints in milliseconds and degrees."""

    t_ms: tuple
    pitch: tuple
    roll: tuple
    yaw: tuple

    def __post_init__(self):
        n = len(self.t_ms)
        if n == 0:
            raise TrajectoryError("trajectory has no waypoints")
        if not (len(self.pitch) == len(self.roll) == len(self.yaw) == n):
            raise TrajectoryError("waypoint columns differ in length")

    @classmethod
    def from_arrays(cls, t_ms, pitch, roll, yaw) -> "Trajectory":
        return cls(*(tuple(float(v) for v in np.asarray(a, dtype=float)) for a in (t_ms, pitch, roll, yaw)))

    @classmethod
    def constant(cls, pitch=0.0, roll=0.0, yaw=0.0, duration_ms=0.0) -> "Trajectory":
        if duration_ms > 0:
            return cls((0.0, float(duration_ms)), (pitch, pitch), (roll, roll), (yaw, yaw))
        return cls((0.0,), (pitch,), (roll,), (yaw,))

    def __len__(self) -> int:
        return len(self.t_ms)

    @property
    def duration(self) -> float:
        """Seconds until the last waypoint."""
        return self.t_ms[-1] / 1000.0

    def arrays(self):
        """(t [s], pitch, roll, yaw [rad]) float arrays for the kernel."""
        return (np.asarray(self.t_ms) / 1000.0, np.radians(self.pitch),
                np.radians(self.roll), np.radians(self.yaw))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(self.t_ms, self.pitch, self.roll, self.yaw):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(h.strip() for h in rows[0]) != CSV_HEADER:
            raise TrajectoryError(f"trajectory CSV header must be {','.join(CSV_HEADER)}")
        body = [r for r in rows[1:] if r]
        try:
            cols = list(zip(*[[float(v) for v in r] for r in body]))
        except ValueError as exc:
            raise TrajectoryError(f"bad number in trajectory CSV: {exc}") from exc
        if not cols:
            raise TrajectoryError("trajectory has no waypoints")
        return cls.from_arrays(*cols)

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.from_csv(Path(path).read_text())


def validate(traj: Trajectory, max_slew: float = DEFAULT_MAX_SLEW) -> Trajectory:
    """Return ``traj`` if it is permissible, else raise."""
    t = np.asarray(traj.t_ms)
    if t[0] != 0.0:
        raise NonMonotonicTime("trajectory must start at t = 0", t=float(t[0]))
    bad = np.nonzero(np.diff(t) <= 0.0)[0]
    if bad.size:
        raise NonMonotonicTime(f"time not strictly increasing at {t[bad[0] + 1]} ms",
                               t=float(t[bad[0] + 1]))
    for name, col, lim in (("pitch", traj.pitch, PITCH_LIMIT), ("roll", traj.roll, ROLL_LIMIT),
                           ("yaw", traj.yaw, YAW_LIMIT)):
        a = np.asarray(col)
        over = np.nonzero(np.abs(a) > lim + 1e-9)[0]
        if over.size:
            k = over[0]
            raise LimitViolation(f"{name} {a[k]} deg exceeds +/-{lim} at t = {t[k]} ms",
                                 axis=name, t=float(t[k]))
    if len(t) > 1:
        dt = np.diff(t) / 1000.0
        for name, col in (("pitch", traj.pitch), ("roll", traj.roll), ("yaw", traj.yaw)):
            rate = np.abs(np.diff(np.asarray(col))) / dt
            over = np.nonzero(rate > max_slew * (1.0 + 1e-9))[0]
            if over.size:
                k = over[0]
                raise SlewViolation(f"{name} slews {rate[k]:.1f} deg/s after t = {t[k]} ms",
                                    axis=name, t=float(t[k]), rate=float(rate[k]))
    return traj


def sample(traj: Trajectory, t: float, dt: float | None = None) -> TiltState:
    """Platform state at ``t`` seconds.

    Rates come from the piecewise-linear derivative. With ``dt`` the yaw
    acceleration is the backward difference of the rate over one step, which
    is what the simulator applies; otherwise it is the piecewise derivative
    (zero inside each segment).
    """
    tt = np.asarray(traj.t_ms) / 1000.0

    def at(time):
        if len(tt) == 1 or time >= tt[-1]:
            return traj.pitch[-1], traj.roll[-1], traj.yaw[-1], 0.0
        if time <= tt[0]:
            return traj.pitch[0], traj.roll[0], traj.yaw[0], 0.0
        k = int(np.searchsorted(tt, time, side="right")) - 1
        span = tt[k + 1] - tt[k]
        f = (time - tt[k]) / span
        lerp = lambda col: col[k] + f * (col[k + 1] - col[k])  # noqa: E731
        rate = (traj.yaw[k + 1] - traj.yaw[k]) / span
        return lerp(traj.pitch), lerp(traj.roll), lerp(traj.yaw), rate

    p, r, y, rate = at(t)
    accel = 0.0
    if dt is not None and t > 0.0:
        accel = math.radians(rate - at(t - dt)[3]) / dt
    return TiltState(math.radians(p), math.radians(r), math.radians(y), math.radians(rate), accel)


def concatenate(first: Trajectory, second: Trajectory, gap_ms: float = 1.0) -> Trajectory:
    """Run ``second`` after ``first``; consecutive waypoints are ``gap_ms`` apart."""
    offset = first.t_ms[-1] + gap_ms
    return Trajectory(first.t_ms + tuple(t + offset for t in second.t_ms),
                      first.pitch + second.pitch, first.roll + second.roll,
                      first.yaw + second.yaw)


# stochastic agitation ------------------------------------------------------

def _ease(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(np.linspace(0.0, math.pi, n))


def stochastic_trajectory(seed: int, duration: float, amp: float = DEFAULT_AMP_STOCH,
                          step_ms: float = 50.0, max_yaw: float = 90.0,
                          max_yaw_rate: float = 45.0) -> Trajectory:
    """Seeded smooth agitation of ``duration`` seconds.

    Each 2-4 s segment eases the tilt to a new random direction of magnitude
    between half and full ``amp`` and holds it; yaw drifts between random
    headings at a bounded rate.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    total = duration * 1000.0
    times, pitch, roll = [0.0], [0.0], [0.0]
    t = 0.0
    p0 = r0 = 0.0
    while t < total:
        seg = rng.uniform(2000.0, 4000.0)
        ramp = min(seg, rng.uniform(400.0, 1000.0))
        phi = rng.uniform(0.0, 2.0 * math.pi)
        mag = amp * rng.uniform(0.5, 1.0)
        p1, r1 = mag * math.cos(phi), mag * math.sin(phi)
        n = max(2, int(round(ramp / step_ms)) + 1)
        w = _ease(n)[1:]
        ts = t + np.linspace(0.0, ramp, n)[1:]
        times.extend(ts)
        pitch.extend(p0 + (p1 - p0) * w)
        roll.extend(r0 + (r1 - r0) * w)
        times.append(t + seg)
        pitch.append(p1)
        roll.append(r1)
        t += seg
        p0, r0 = p1, r1
    # yaw: piecewise-linear sweeps between random headings
    yaw_t, yaw_v = [0.0], [0.0]
    while yaw_t[-1] < total:
        target = rng.uniform(-max_yaw, max_yaw)
        span = max(abs(target - yaw_v[-1]) / max_yaw_rate * 1000.0, 500.0)
        yaw_t.append(yaw_t[-1] + span)
        yaw_v.append(target)
        yaw_t.append(yaw_t[-1] + rng.uniform(500.0, 2000.0))
        yaw_v.append(target)
    times = np.asarray(times)
    yaw_t = np.asarray(yaw_t)
    grid = np.union1d(np.union1d(times[times < total], yaw_t[yaw_t < total]), [total])
    pitch_g = np.interp(grid, times, pitch)
    roll_g = np.interp(grid, times, roll)
    yaw_g = np.interp(grid, yaw_t, yaw_v)
    return Trajectory.from_arrays(grid, pitch_g, roll_g, yaw_g)


def yaw_spin(peak_rate: float = 3.0, ramp: float = 1.0, step_ms: float = 1.0) -> Trajectory:
    """Level platform spinning up to ``peak_rate`` rad/s and back down.

    Yaw acceleration is constant in each half, sampled every ``step_ms`` so
    the rate is smooth at the simulator's resolution.
    """
    n = int(round(2.0 * ramp * 1000.0 / step_ms))
    t = np.arange(n + 1) * step_ms / 1000.0
    accel = peak_rate / ramp
    up = 0.5 * accel * np.minimum(t, ramp) ** 2
    tail = np.clip(t - ramp, 0.0, None)
    yaw = up + peak_rate * tail - 0.5 * accel * tail ** 2
    zeros = np.zeros_like(t)
    return validate(Trajectory.from_arrays(t * 1000.0, zeros, zeros, np.degrees(yaw)))


# SCM pulses ----------------------------------------------------------------

@dataclass(frozen=True)
class PulseParameters:
    amplitude_deg: float
    push_ms: float
    brake_deg: float
    brake_ms: float
    ramp_rate: float = 400.0  # deg/s, below the platform slew limit
    settle_ms: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.amplitude_deg <= PITCH_LIMIT:
            raise ValueError("pulse amplitude must lie in (0, 45] degrees")
        if not 0.0 <= self.brake_deg <= PITCH_LIMIT:
            raise ValueError("brake amplitude must lie in [0, 45] degrees")
        if self.push_ms < 0 or self.brake_ms < 0 or self.settle_ms < 0:
            raise ValueError("pulse durations must be non-negative")
        if not 0.0 < self.ramp_rate <= DEFAULT_MAX_SLEW:
            raise ValueError("ramp rate must lie in (0, 500] deg/s")

    def waveform(self) -> tuple[list[float], list[float]]:
        """(t_ms, angle) of one positive pulse starting and ending level."""
        up = self.amplitude_deg / self.ramp_rate * 1000.0
        over = (self.amplitude_deg + self.brake_deg) / self.ramp_rate * 1000.0
        down = self.brake_deg / self.ramp_rate * 1000.0
        t, a = [0.0], [0.0]
        for dur, ang in ((up, self.amplitude_deg), (self.push_ms, self.amplitude_deg),
                         (over, -self.brake_deg), (self.brake_ms, -self.brake_deg),
                         (down, 0.0), (self.settle_ms, 0.0)):
            if dur > 0.0:
                t.append(t[-1] + dur)
                a.append(ang)
        return t, a

    @property
    def duration_ms(self) -> float:
        return self.waveform()[0][-1]


@dataclass(frozen=True)
class ScmProgram:
    moves: tuple
    pulse: dict = field(default_factory=dict)

    def __post_init__(self):
        for m in self.moves:
            if m not in MOVES:
                raise ValueError(f"unknown move {m!r}; expected one of N, S, E, W")

    @classmethod
    def from_json(cls, data: dict) -> "ScmProgram":
        return cls(tuple(str(m).upper() for m in data.get("moves", [])), dict(data.get("pulse", {}) or {}))

    @classmethod
    def load(cls, path) -> "ScmProgram":
        return cls.from_json(json.loads(Path(path).read_text()))

    @property
    def displacement(self) -> tuple[int, int]:
        """Net lattice displacement in platform (x, y) cells."""
        return (sum(MOVE_VECTORS[m][0] for m in self.moves),
                sum(MOVE_VECTORS[m][1] for m in self.moves))


def _pulse_from(program: ScmProgram, calibration: PulseParameters | None) -> PulseParameters:
    over = dict(program.pulse)
    if calibration is None:
        needed = {"amplitude_deg", "push_ms", "brake_deg", "brake_ms"}
        if program.moves and not needed <= set(over):
            raise CalibrationMissing("program needs calibrated pulse parameters")
        if not program.moves:
            return None
        return PulseParameters(**over)
    return replace(calibration, **over) if over else calibration


def compile_scm(program: ScmProgram, calibration: PulseParameters | None = None) -> Trajectory:
    """Exclusive pitch/roll pulse train realizing ``program``."""
    pulse = _pulse_from(program, calibration)
    t, p, r = [0.0], [0.0], [0.0]
    if pulse is not None:
        wt, wa = pulse.waveform()
        for move in program.moves:
            axis, sign = MOVES[move]
            base = t[-1]
            for ti, ai in zip(wt[1:], wa[1:]):
                t.append(base + ti)
                p.append(sign * ai if axis == 0 else 0.0)
                r.append(sign * ai if axis == 1 else 0.0)
    traj = Trajectory.from_arrays(t, p, r, np.zeros(len(t)))
    return validate(traj)


def _simulate_single(traj: Trajectory, constants: PhysicalConstants, tail: float = 0.0):
    eng = Engine(1, constants, MagnetModel(), magnets_on=False)
    eng.place_module(0, 0.0, 0.0)
    ticks = int(round((traj.duration + tail) / constants.dt))
    eng.advance(traj.arrays(), ticks, stop_on_links=False)
    return eng


def pulse_displacement(pulse: PulseParameters, constants: PhysicalConstants):
    """(displacement m, final speed m/s) of one free module under one N pulse."""
    traj = compile_scm(ScmProgram(("N",)), pulse)
    eng = _simulate_single(traj, constants)
    return float(eng.bpos[0, 0]), float(np.hypot(*eng.bvel[0]))


def calibrate_pulse(constants: PhysicalConstants | None = None, max_amplitude: float = PITCH_LIMIT,
                    target: float | None = None, tolerance: float = 5e-5) -> PulseParameters:
    """Find pulse parameters that slide one free module exactly one cell.

    Tries increasing amplitudes above the static-friction angle; for each
    one, bisects the push duration against the simulated displacement. The
    brake tilt stays below the static-friction angle so a stopped module
    stays put.
    """
    constants = constants or PhysicalConstants()
    target = constants.module_edge if target is None else target
    static = math.degrees(math.atan(constants.mu_static))
    brake = round(0.5 * static, 3)
    brake_ms = 400.0
    candidates = [a for a in (10.0, 15.0, 20.0, 30.0, 45.0) if static * 1.1 < a <= max_amplitude]
    if not candidates and static * 1.1 < max_amplitude:
        candidates = [max_amplitude]
    for amp in candidates:
        lo, hi = 0.0, 2000.0
        base = PulseParameters(amp, 0.0, brake, brake_ms)
        if pulse_displacement(replace(base, push_ms=hi), constants)[0] < target:
            continue
        if pulse_displacement(base, constants)[0] > target:
            continue
        best = None
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            pulse = replace(base, push_ms=mid)
            d, v = pulse_displacement(pulse, constants)
            if abs(d - target) <= tolerance and v < constants.v_stick:
                best = pulse
                break
            if d < target:
                lo = mid
            else:
                hi = mid
        if best is not None:
            return best
    raise NoSolution(f"no pulse up to {max_amplitude} deg moves a module {target * 1000:.1f} mm")


def pulse_to_json(p: PulseParameters) -> dict:
    return asdict(p)


# movement classification ---------------------------------------------------

class MovementClass(str, Enum):
    SLIDE = "Slide"
    STOCHASTIC = "Stochastic"
    PIVOT = "Unsupported(Pivot)"
    ROTATION = "Unsupported(Rotation)"

    @property
    def supported(self) -> bool:
        return self in (MovementClass.SLIDE, MovementClass.STOCHASTIC)


def settle_points(traj: Trajectory, min_ms: float = LEVEL_MIN_MS) -> list[float]:
    """Times (s) ending each level, non-rotating stretch of ``min_ms`` or more."""
    t = np.asarray(traj.t_ms)
    level = ((np.asarray(traj.pitch) == 0.0) & (np.asarray(traj.roll) == 0.0))
    out = []
    k = 0
    n = len(t)
    while k < n - 1:
        if level[k] and level[k + 1] and traj.yaw[k] == traj.yaw[k + 1]:
            j = k + 1
            while j + 1 < n and level[j + 1] and traj.yaw[j + 1] == traj.yaw[j]:
                j += 1
            if t[j] - t[k] >= min_ms:
                out.append(t[j] / 1000.0)
            k = j
        else:
            k += 1
    return out


def classify(traj: Trajectory, initial_condition: str = "GridAligned",
             constants: PhysicalConstants | None = None,
             start_cells=GRID_START_CELLS) -> MovementClass:
    """Movement class of ``traj`` from grid-aligned starts."""
    if initial_condition != "GridAligned":
        raise ValueError("only the GridAligned initial condition is supported")
    validate(traj)
    constants = replace(constants or PhysicalConstants(), body_collisions=False)
    edge = constants.module_edge
    cells = sorted(set(tuple(c) for c in start_cells))
    eng = Engine(len(cells), constants, MagnetModel(), magnets_on=False)
    for i, (cx, cy) in enumerate(cells):
        eng.place_module(i, cx * edge, cy * edge)
    start = eng.bpos[: len(cells)].copy()
    arrays = traj.arrays()
    checks = sorted(set(settle_points(traj)) | {traj.duration + CLASSIFY_TAIL})
    dt = constants.dt
    verdict = MovementClass.SLIDE
    for tc in checks:
        ticks = int(round(tc / dt)) - eng.tick
        if ticks > 0:
            eng.advance(arrays, ticks, stop_on_links=False)
        for i in range(len(cells)):
            d = (eng.bpos[i] - start[i]) / edge
            residual = np.hypot(*(d - np.round(d))) * edge
            turns = eng.bth[i] / (0.5 * math.pi)
            turn_err = abs(turns - round(turns)) * 0.5 * math.pi
            if residual >= SLIDE_RESIDUAL or turn_err >= SLIDE_HEADING:
                return MovementClass.STOCHASTIC
            if round(turns) % 4 != 0:
                verdict = MovementClass.PIVOT if np.any(np.round(d) != 0) else MovementClass.ROTATION
    return verdict
