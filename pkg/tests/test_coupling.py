import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handover.coupling import (
    CouplingKind,
    CouplingState,
    ReverseReturn,
    TrackedReturn,
    participant_initiation_trigger,
    return_policy,
    return_triggered,
    robot_initiation_pos,
    sa_offset,
    spatiotemporal_alignment_pos,
    temporal_alignment_pos,
    tip_progress,
)
from handover.engine import APPROACH, RECEPTACLE_TOP, Z_INT
from handover.kinematics import DEFAULT_HOME_POINT

PEG0 = DEFAULT_HOME_POINT
REC0 = RECEPTACLE_TOP


def state(gx=0.15, gy=-0.15):
    return CouplingState(PEG0, REC0, PEG0 + np.array([gx, gy, -APPROACH]), Z_INT)


def test_scene_geometry():
    s = state()
    assert REC0[2] < s.z_int < PEG0[2]
    # the vertical gap between peg and receptacle comes out near 22 cm
    assert PEG0[1] - REC0[1] == pytest.approx(0.22, abs=0.01)
    with pytest.raises(ValueError):
        CouplingState(PEG0, REC0, PEG0, z_int=0.9)
    with pytest.raises(ValueError):
        CouplingState(PEG0, REC0, PEG0, freeze_fraction=1.0)


def test_robot_initiation_examples():
    s = state()
    assert np.allclose(robot_initiation_pos(0.0, s), PEG0)
    assert np.allclose(robot_initiation_pos(1.0, s), s.pos_int)
    assert np.allclose(robot_initiation_pos(0.5, s), 0.5 * (PEG0 + s.pos_int), atol=1e-12)


def test_participant_trigger_boundary_and_latch():
    tip0 = np.array([0.1, 0.2, 0.3])
    assert not participant_initiation_trigger(tip0 + [0.0099, 0, 0], tip0)
    assert participant_initiation_trigger(tip0 + [0.0100, 0, 0], tip0)
    assert participant_initiation_trigger(tip0, tip0, started=True)


def test_temporal_alignment_examples():
    s = state()
    assert np.allclose(temporal_alignment_pos(REC0[2], s), PEG0)
    mid = REC0[2] + 0.5 * (Z_INT - REC0[2])
    assert np.allclose(temporal_alignment_pos(mid, s), PEG0 + 0.5 * (s.pos_int - PEG0), atol=1e-12)
    assert not s.frozen
    assert np.allclose(temporal_alignment_pos(Z_INT, state()), state().pos_int, atol=1e-12)


def test_temporal_alignment_freezes_and_holds():
    s = state()
    z97 = REC0[2] + 0.97 * (Z_INT - REC0[2])
    held = temporal_alignment_pos(z97, s)
    assert s.frozen
    assert np.array_equal(temporal_alignment_pos(REC0[2], s), held)
    s2 = state()
    temporal_alignment_pos(REC0[2] + 0.969 * (Z_INT - REC0[2]), s2)
    assert not s2.frozen


def test_temporal_alignment_clamps_overshoot():
    s = CouplingState(PEG0, REC0, PEG0 + [0, 0, -APPROACH], Z_INT, freeze_fraction=0.999)
    assert np.allclose(temporal_alignment_pos(REC0[2] - 0.1, s), PEG0)


def test_spatiotemporal_examples():
    s = state()
    assert np.allclose(spatiotemporal_alignment_pos(REC0, s), PEG0 - [0, 0.04, 0], atol=0)
    s = state()
    assert np.allclose(spatiotemporal_alignment_pos(REC0 + [0.05, 0, 0], s), PEG0 + [0.05, -0.04, 0], atol=1e-15)


def test_spatiotemporal_depth_mirrors():
    s = state()
    d = 0.03
    p = spatiotemporal_alignment_pos(REC0 + [0, 0, d], s)
    assert p[2] == pytest.approx(PEG0[2] - d, abs=1e-15)


def test_return_trigger_boundary():
    robot = np.array([0.4, 0.3, 0.4])
    assert not return_triggered(robot + [0, 0, -0.019], robot)
    assert return_triggered(robot + [0, 0, -0.020], robot)


def test_reverse_return_timing_and_path():
    s = state()
    fwd = lambda t: robot_initiation_pos(t, s)
    ret = return_policy(CouplingKind.ROBOT_INITIATION, forward=fwd, t_from=1.0)
    assert isinstance(ret, ReverseReturn)
    assert ret.duration == pytest.approx(2.0 / 3.0)
    assert np.allclose(ret.position(0.0), s.pos_int)
    assert np.allclose(ret.position(ret.duration), PEG0)
    assert ret.done(ret.duration) and not ret.done(0.5)
    # every return point lies on the forward path at 1.5x the rate
    for sr in np.linspace(0, ret.duration, 9):
        assert np.allclose(ret.position(sr), fwd(1.0 - 1.5 * sr), atol=1e-12)


def test_tracked_return_monotone_and_completes():
    s = state()
    anchor = temporal_alignment_pos(Z_INT, s)
    ret = return_policy(CouplingKind.TEMPORAL_ALIGNMENT, state=s, tip_z=Z_INT)
    assert isinstance(ret, TrackedReturn)
    assert np.allclose(ret.position(Z_INT), anchor)
    p1 = ret.position(0.5 * (Z_INT + REC0[2]))
    # moving the tip forward again does not bring the peg back out
    p2 = ret.position(Z_INT)
    assert np.allclose(p1, p2)
    ret.position(REC0[2])
    assert ret.done()


def test_kind_flags():
    assert CouplingKind("TA").tip_driven and CouplingKind("SA").tip_driven
    assert not CouplingKind("RI").tip_driven and not CouplingKind("PI").tip_driven


coord = st.floats(-0.3, 0.3, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(coord, coord, st.floats(-0.1, 0.5)), min_size=1, max_size=40))
def test_ta_synchrony_and_freeze(tips):
    s = state()
    frozen_at = None
    for x, y, z in tips:
        tip_z = REC0[2] + z
        was_frozen = s.frozen
        p = temporal_alignment_pos(tip_z, s)
        if was_frozen:
            assert np.array_equal(p, frozen_at)
            continue
        frac = (p - PEG0) @ (s.pos_int - PEG0) / np.sum((s.pos_int - PEG0) ** 2)
        assert frac == pytest.approx(min(max(tip_progress(tip_z, s), 0), 1), abs=1e-9)
        if s.frozen:
            frozen_at = p


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(coord, coord, st.floats(-0.1, 0.5)), min_size=1, max_size=40))
def test_sa_mirror_identity(tips):
    s = state()
    for x, y, z in tips:
        tip = REC0 + [x, y, z]
        if s.frozen:
            break
        p = spatiotemporal_alignment_pos(tip, s)
        lhs = p - PEG0 + sa_offset(tip[2], s)
        assert np.allclose(lhs, s.mirror * (tip - REC0), atol=1e-9)
