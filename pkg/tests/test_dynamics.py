import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hcmsim.dynamics import (
    BodyState,
    TiltState,
    WorldState,
    engine_to_world,
    friction_force,
    in_plane_accel,
    merge_bodies,
    single_module,
    split_body,
    step,
    world_to_engine,
)
from hcmsim.engine import Engine
from hcmsim.errors import LimitExceeded, UnknownBond
from hcmsim.params import PhysicalConstants

C = PhysicalConstants()
G = C.gravity


def test_tilt_limits():
    TiltState(math.radians(45), -math.radians(45), math.pi).check()
    with pytest.raises(LimitExceeded):
        TiltState(pitch=math.radians(46)).check()
    with pytest.raises(LimitExceeded):
        step(WorldState(bodies=(single_module(0, 0, 0),)), TiltState(roll=1.0))


def test_gravity_component():
    a = in_plane_accel(TiltState(pitch=math.radians(10)), (0, 0), (0, 0))
    assert a == pytest.approx([G * math.sin(math.radians(10)), 0.0])
    a = in_plane_accel(TiltState(roll=-math.radians(20)), (0, 0), (0, 0))
    assert a == pytest.approx([0.0, -G * math.sin(math.radians(20))])


def test_rotating_frame_terms():
    w, r = 2.0, 0.1
    # centrifugal pushes outward
    assert in_plane_accel(TiltState(yaw_rate=w), (r, 0), (0, 0)) == pytest.approx([w * w * r, 0])
    # Coriolis is perpendicular to the velocity
    a = in_plane_accel(TiltState(yaw_rate=w), (0, 0), (0.05, 0))
    assert a == pytest.approx([0, -2 * w * 0.05])
    # Euler term from angular acceleration
    a = in_plane_accel(TiltState(yaw_accel=3.0), (r, 0), (0, 0))
    assert a == pytest.approx([0, -3.0 * r])
    off = PhysicalConstants(yaw_terms=False)
    assert in_plane_accel(TiltState(yaw_rate=w), (r, 0), (0, 0), off) == pytest.approx([0, 0])


def test_friction_force():
    n = C.module_mass * G
    # below breakaway the contact cancels the applied force
    assert friction_force(n, (0, 0), (0.05, 0)) == pytest.approx([-0.05, 0])
    # sliding: kinetic friction opposes the velocity
    assert friction_force(n, (0.1, 0), (0, 0)) == pytest.approx([-C.mu_kinetic * n, 0])
    # breakaway exceeded from rest: opposes the push
    f = friction_force(n, (0, 0), (0, 1.0))
    assert f == pytest.approx([0, -C.mu_kinetic * n])
    with pytest.raises(ValueError):
        friction_force(-1.0, (0, 0), (0, 0))


def test_static_below_friction_angle(flat):
    angle = 0.9 * math.atan(C.mu_static)
    eng = Engine(1)
    eng.place_module(0, 0, 0)
    traj = (np.array([0.0]), np.array([angle]), np.zeros(1), np.zeros(1))
    eng.advance(traj, 2000, stop_on_links=False)
    assert np.all(eng.bpos[0] == 0.0)


def test_slide_matches_constant_acceleration():
    angle = math.radians(15)
    eng = Engine(1)
    eng.place_module(0, -0.15, 0)
    traj = (np.array([0.0]), np.array([angle]), np.zeros(1), np.zeros(1))
    t = 0.2
    eng.advance(traj, int(t / C.dt), stop_on_links=False)
    a = G * (math.sin(angle) - C.mu_kinetic * math.cos(angle))
    assert eng.bpos[0, 0] + 0.15 == pytest.approx(0.5 * a * t * t, rel=0.01)
    assert eng.bvel[0, 0] == pytest.approx(a * t, rel=0.01)


def test_flat_stopping_distance():
    v0 = 0.1
    eng = Engine(1)
    eng.place_module(0, 0, 0, velocity=(v0, 0))
    ticks = 0
    while eng.bvel[0, 0] > 0:
        eng.step_tilt(0, 0)
        ticks += 1
    decel = C.mu_kinetic * G
    assert ticks * C.dt == pytest.approx(v0 / decel, abs=2 * C.dt)
    assert eng.bpos[0, 0] == pytest.approx(v0 * v0 / (2 * decel), rel=0.01)


def test_wall_restitution():
    c = PhysicalConstants(friction=False)
    eng = Engine(1, c)
    eng.place_module(0, 0.1, 0, velocity=(0.2, 0))
    for _ in range(2000):
        eng.step_tilt(0, 0)
        if eng.bvel[0, 0] < 0:
            break
    assert eng.bvel[0, 0] == pytest.approx(-c.restitution * 0.2, rel=1e-6)
    assert eng.bpos[0, 0] <= 0.5 * c.arena_side - 0.5 * c.module_edge + 1e-4


def test_head_on_collision_conserves_momentum():
    c = PhysicalConstants(friction=False, restitution=1.0)
    eng = Engine(2, c, magnets_on=False)
    eng.place_module(0, -0.05, 0, velocity=(0.1, 0))
    eng.place_module(1, 0.05, 0, velocity=(-0.1, 0))
    p0 = eng.momentum()
    for _ in range(600):
        eng.step_tilt(0, 0)
    assert eng.momentum() == pytest.approx(p0, abs=1e-12)
    assert eng.bvel[0, 0] < 0 < eng.bvel[1, 0]
    assert eng.bpos[1, 0] - eng.bpos[0, 0] >= c.module_edge - 1e-4


def test_step_is_pure_and_deterministic():
    w = WorldState(bodies=(single_module(0, 0.0, 0.0, velocity=(0.05, 0.01)),
                           single_module(1, 0.1, 0.05, 0.3)))
    cmd = TiltState(pitch=0.1, roll=-0.05, yaw_rate=0.2)
    a = step(w, cmd)
    b = step(w, cmd)
    assert a == b
    assert a.time == pytest.approx(C.dt)
    assert w.bodies[0].position == (0.0, 0.0)


def _pair_world(v1=(0.02, 0.0), w1=0.0, v2=(-0.01, 0.03), w2=0.5):
    return WorldState(bodies=(single_module(0, 0.0, 0.0, 0.0, v1, w1),
                              single_module(1, C.module_edge, 0.0, math.pi, v2, w2)))


def _eng_momenta(world):
    eng = world_to_engine(world)
    return eng.momentum(), eng.angular_momentum()


def test_merge_conserves_momenta():
    w = _pair_world()
    p0, l0 = _eng_momenta(w)
    merged = merge_bodies(w, (0, 0, 1, 0))
    assert len(merged.bodies) == 1
    p1, l1 = _eng_momenta(merged)
    assert p1 == pytest.approx(p0, abs=1e-15)
    assert l1 == pytest.approx(l0, abs=1e-15)
    assert merged.bonds == ((0, 0, 1, 0),)
    with pytest.raises(UnknownBond):
        merge_bodies(merged, (0, 1, 1, 3))


def test_split_inherits_velocity_field():
    merged = merge_bodies(_pair_world(), (0, 0, 1, 0))
    body = merged.bodies[0]
    parts = split_body(merged, (0, 0, 1, 0))
    assert len(parts.bodies) == 2
    for part in parts.bodies:
        r = np.subtract(part.position, body.position)
        expect = np.add(body.velocity, body.angular_velocity * np.array([-r[1], r[0]]))
        assert part.velocity == pytest.approx(tuple(expect), abs=1e-15)
        assert part.angular_velocity == body.angular_velocity
    with pytest.raises(UnknownBond):
        split_body(parts, (0, 0, 1, 0))


def test_merge_snaps_onto_lattice():
    w = WorldState(bodies=(single_module(0, 0.0, 0.0, 0.0),
                           single_module(1, 0.0506, 0.001, math.pi + 0.05)))
    merged = merge_bodies(w, (0, 0, 1, 0))
    fp = dict((m, (c, r)) for m, c, r in merged.bodies[0].footprint)
    assert fp[0][0] == (0, 0)
    assert fp[1] == ((1, 0), 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-2, 2), st.floats(-2, 2))
def test_world_engine_roundtrip(vx, vy, w1, th):
    world = WorldState(bodies=(single_module(3, 0.01, -0.02, th, (vx, vy), w1),),
                       rotors=tuple(((0.0,) * 4, (0.0,) * 4) for _ in range(4)))
    eng = world_to_engine(world)
    back = engine_to_world(eng, world.time, world.tilt)
    assert back.bodies[0] == BodyState(3, (0.01, -0.02), th, (vx, vy), w1, ((3, (0, 0), 0),))


def test_construction_order_does_not_matter():
    traj = (np.array([0.0, 2000.0]), np.array([0.0, 0.3]), np.array([0.0, -0.2]),
            np.array([0.0, 1.0]))
    poses = [(-0.1, 0.0, 0.1), (0.05, 0.07, 1.0), (0.1, -0.1, 2.0)]
    engines = []
    for order in ([0, 1, 2], [2, 0, 1]):
        eng = Engine(3)
        for i in order:
            eng.place_module(i, *poses[i])
        eng.advance(traj, 1500, stop_on_links=False)
        engines.append(eng)
    a, b = engines
    assert np.array_equal(a.bpos, b.bpos) and np.array_equal(a.bth, b.bth)
