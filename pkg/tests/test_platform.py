import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hcmsim import corpus
from hcmsim.errors import (
    CalibrationMissing,
    LimitViolation,
    NonMonotonicTime,
    NoSolution,
    SlewViolation,
    TrajectoryError,
)
from hcmsim.params import PhysicalConstants
from hcmsim.platform import (
    MovementClass,
    PulseParameters,
    ScmProgram,
    Trajectory,
    calibrate_pulse,
    classify,
    compile_scm,
    concatenate,
    pulse_displacement,
    sample,
    stochastic_trajectory,
    validate,
    yaw_spin,
)

C = PhysicalConstants()


def test_validate_limits():
    validate(Trajectory((0.0, 200.0), (0.0, 45.0), (0.0, -45.0), (0.0, 90.0)))
    with pytest.raises(LimitViolation):
        validate(Trajectory((0.0, 1000.0), (0.0, 46.0), (0.0, 0.0), (0.0, 0.0)))
    with pytest.raises(LimitViolation):
        validate(Trajectory((0.0, 1000.0), (0.0, 0.0), (0.0, 0.0), (0.0, 181.0)))
    with pytest.raises(SlewViolation):
        validate(Trajectory((0.0, 10.0), (0.0, 10.0), (0.0, 0.0), (0.0, 0.0)))
    with pytest.raises(NonMonotonicTime):
        validate(Trajectory((0.0, 10.0, 10.0), (0.0,) * 3, (0.0,) * 3, (0.0,) * 3))
    with pytest.raises(TrajectoryError):
        Trajectory((), (), (), ())


def test_sample_interpolates():
    tr = Trajectory((0.0, 1000.0, 2000.0), (0.0, 10.0, 10.0), (0.0, 0.0, -4.0), (0.0, 30.0, 30.0))
    s = sample(tr, 0.5)
    assert math.degrees(s.pitch) == pytest.approx(5.0)
    assert math.degrees(s.yaw_rate) == pytest.approx(30.0)
    s = sample(tr, 1.5)
    assert math.degrees(s.roll) == pytest.approx(-2.0) and s.yaw_rate == 0.0
    assert sample(tr, 1.0005, dt=0.001).yaw_accel == pytest.approx(math.radians(-30.0) / 0.001)
    assert sample(tr, 9.0).pitch == pytest.approx(math.radians(10.0))


def test_csv_roundtrip(tmp_path):
    tr = stochastic_trajectory(3, 10.0)
    p = tmp_path / "t.csv"
    tr.save(p)
    assert Trajectory.load(p) == tr
    with pytest.raises(TrajectoryError):
        Trajectory.from_csv("a,b,c,d\n0,0,0,0\n")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(1.0, 40.0))
def test_stochastic_is_valid_and_seeded(seed, amp):
    a = stochastic_trajectory(seed, 30.0, amp)
    validate(a)
    assert max(np.hypot(a.pitch, a.roll)) <= amp + 1e-9
    assert a.duration == pytest.approx(30.0)
    assert stochastic_trajectory(seed, 30.0, amp) == a


def test_concatenate():
    a = Trajectory.constant(duration_ms=100.0)
    b = Trajectory((0.0, 50.0), (0.0, 5.0), (0.0, 0.0), (0.0, 0.0))
    c = concatenate(a, b)
    assert c.t_ms == (0.0, 100.0, 101.0, 151.0)
    assert c.pitch[-1] == 5.0


def test_compile_requires_calibration():
    with pytest.raises(CalibrationMissing):
        compile_scm(ScmProgram(("N",)))
    assert len(compile_scm(ScmProgram(()))) == 1
    with pytest.raises(ValueError):
        ScmProgram(("X",))


def test_compiled_pulses_are_exclusive(calibration):
    tr = compile_scm(ScmProgram(tuple("NESW")), calibration)
    validate(tr)
    for p, r in zip(tr.pitch, tr.roll):
        assert p == 0.0 or r == 0.0
    assert tr.pitch[-1] == tr.roll[-1] == 0.0


def test_pulse_parameters_checked():
    with pytest.raises(ValueError):
        PulseParameters(50.0, 10.0, 1.0, 10.0)
    with pytest.raises(ValueError):
        PulseParameters(10.0, -1.0, 1.0, 10.0)


def test_calibration_moves_one_cell(calibration):
    d, v = pulse_displacement(calibration, C)
    assert d == pytest.approx(C.module_edge, abs=1e-4)
    assert v < C.v_stick
    assert calibration.brake_deg < math.degrees(math.atan(C.mu_static))


def test_calibration_unreachable():
    with pytest.raises(NoSolution):
        calibrate_pulse(max_amplitude=0.5)


def test_program_displacement():
    assert ScmProgram(tuple("EENW")).displacement == (1, 1)


def test_single_move_direction(calibration):
    # N moves along platform +x, E along +y
    from hcmsim.platform import _simulate_single
    eng = _simulate_single(compile_scm(ScmProgram(("E",)), calibration), C, tail=0.5)
    assert eng.bpos[0] == pytest.approx([0.0, C.module_edge], abs=1e-3)


def test_classify_corpus():
    slide = Trajectory.load(corpus.path("scm_eenw.csv"))
    assert classify(slide) == MovementClass.SLIDE
    assert classify(Trajectory.load(corpus.path("stochastic_60s.csv"))) == MovementClass.STOCHASTIC
    with pytest.raises(ValueError):
        classify(slide, "Anywhere")


def test_level_platform_is_slide():
    assert classify(Trajectory.constant(duration_ms=500.0)) == MovementClass.SLIDE


def test_yaw_spin_shape():
    tr = yaw_spin(3.0, 1.0)
    validate(tr)
    assert math.radians(tr.yaw[-1]) == pytest.approx(3.0, rel=1e-3)
    assert sample(tr, 1.0).yaw_rate == pytest.approx(3.0, rel=1e-2)
