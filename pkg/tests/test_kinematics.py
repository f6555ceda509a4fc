import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handover.frames import Pose, matrix_to_quat
from handover.kinematics import (
    DEFAULT_HOME_POINT,
    DEFAULT_POSTURE,
    ArmModel,
    ElbowElevation,
    JointLimitError,
    anchored_elevation,
    apply_elevation,
    default_arm,
    end_effector,
    forward_kinematics,
    ik_step,
    jacobian,
    load_arm,
    solve_to_target,
)
from oracles import homogeneous_chain, two_link_jacobian

ARM = default_arm()
joints = st.lists(st.floats(-150, 150, allow_nan=False), min_size=6, max_size=6)


def fd_jacobian(arm, q, h=1e-6):
    """Central differences of position and (small-angle) orientation change, per radian."""
    J = np.empty((6, 6))
    for k in range(6):
        dq = np.zeros(6)
        dq[k] = math.degrees(h)
        p1, R1 = end_effector(arm, q + dq)
        p0, R0 = end_effector(arm, q - dq)
        J[:3, k] = (p1 - p0) / (2 * h)
        W = (R1 - R0) @ end_effector(arm, q)[1].T / (2 * h)
        J[3:, k] = [W[2, 1], W[0, 2], W[1, 0]]
    return J


def test_default_posture_sits_at_home_point():
    _, tool = forward_kinematics(ARM, DEFAULT_POSTURE)
    assert np.allclose(tool.position, DEFAULT_HOME_POINT, atol=1e-12)


def test_zero_posture_is_sum_of_offsets():
    _, tool = forward_kinematics(ARM, np.zeros(6))
    assert np.allclose(tool.position, ARM.base_position + ARM.offsets.sum(axis=0), atol=1e-12)


def test_default_posture_matches_transform_chain_oracle():
    p, R = homogeneous_chain(ARM.base_position, ARM.axes, ARM.offsets, DEFAULT_POSTURE)
    _, tool = forward_kinematics(ARM, DEFAULT_POSTURE)
    assert np.allclose(tool.position, p, atol=1e-9)
    assert abs(abs(float(tool.orientation @ matrix_to_quat(R))) - 1.0) < 1e-9


def test_j0_rotates_about_base_depth_axis():
    q = DEFAULT_POSTURE.copy()
    p0, _ = end_effector(ARM, q)
    q[0] = 30.0
    p1, _ = end_effector(ARM, q)
    r0, r1 = p0 - ARM.base_position, p1 - ARM.base_position
    assert np.linalg.norm(r1) == pytest.approx(np.linalg.norm(r0), abs=1e-12)
    assert r1[2] == pytest.approx(r0[2], abs=1e-12)
    ang = math.degrees(math.atan2(r1[1], r1[0]) - math.atan2(r0[1], r0[0]))
    assert ang == pytest.approx(30.0, abs=1e-9)


def test_limit_violation_rejected():
    with pytest.raises(JointLimitError):
        forward_kinematics(ARM, [0, 0, 170, 0, 0, 0])
    with pytest.raises(JointLimitError):
        jacobian(ARM, [0, 0, 0, 0, -161, 0])


def test_two_link_planar_reduction():
    # only J1 and J2 move, both about x: the chain is planar in (y, z)
    q = np.array([0.0, 20.0, -50.0, 0.0, 0.0, 0.0])
    J = jacobian(ARM, q)
    l1 = 0.40
    l2 = 0.50 + 0.06  # forearm plus tool, J4 at zero
    # rotation about +x turns y toward z, so the oracle's (x, y) plane is our (y, z)
    ref = two_link_jacobian(l1, l2, math.radians(q[1]), math.radians(q[2]))
    assert np.allclose(J[[1, 2]][:, [1, 2]], ref, atol=1e-12)


def test_column_zero_when_axis_through_tool_point():
    # J5 rolls the tool about its own link, which ends at the tool point
    J = jacobian(ARM, DEFAULT_POSTURE)
    assert np.allclose(J[:3, 5], 0.0, atol=1e-12)


def test_jacobian_finite_differences_at_random_postures():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        q = rng.uniform(-150, 150, 6)
        worst = max(worst, float(np.max(np.abs(jacobian(ARM, q) - fd_jacobian(ARM, q)))))
    assert worst <= 1e-5


def test_ik_step_zero_delta_is_identity():
    q = DEFAULT_POSTURE.copy()
    assert np.array_equal(ik_step(ARM, q, np.zeros(6), 0.01), q)


def test_ik_step_reduces_error():
    q = DEFAULT_POSTURE.copy()
    p, R = end_effector(ARM, q)
    target = p + np.array([0.0, 0.0, -0.01])
    new = ik_step(ARM, q, np.r_[target - p, 0, 0, 0], 0.01)
    assert np.linalg.norm(end_effector(ARM, new)[0] - target) < np.linalg.norm(p - target)


def test_ik_step_clamp_returns_input_verbatim():
    q = np.array([0.0, 65.0, -159.9, 0.0, 75.0, 0.0])
    J = jacobian(ARM, q)
    # a pose change that asks J2 for another +/-5 degrees
    delta = J @ np.radians([0, 0, -5.0, 0, 0, 0])
    out = ik_step(ARM, q, delta, 1.0)
    assert out is not q and np.array_equal(out, q)


def test_ik_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        ik_step(ARM, DEFAULT_POSTURE, np.zeros(6), 0.0)


def test_ik_step_singular_posture_does_not_raise():
    out = ik_step(ARM, np.zeros(6), np.r_[0.001, 0, 0, 0, 0, 0], 0.01)
    assert np.all(np.isfinite(out))


def test_solve_to_target_cases():
    _, tool = forward_kinematics(ARM, DEFAULT_POSTURE)
    same = solve_to_target(ARM, DEFAULT_POSTURE, tool)
    assert same.converged and same.iterations == 0
    target = Pose(tool.position + np.array([0, 0, -0.01]), tool.orientation)
    res = solve_to_target(ARM, DEFAULT_POSTURE, target)
    assert res.converged and res.position_error < 1e-4
    far = Pose(ARM.base_position + np.array([0, 0, -3.0]), tool.orientation)
    assert not solve_to_target(ARM, DEFAULT_POSTURE, far).converged
    with pytest.raises(ValueError):
        solve_to_target(ARM, DEFAULT_POSTURE, tool, tol=0)


def test_elevation_examples():
    low = apply_elevation(ARM, ElbowElevation.E_LOW)
    twice = apply_elevation(low, ElbowElevation.E_LOW)
    assert twice.elevation_deg == low.elevation_deg
    assert np.array_equal(end_effector(twice, DEFAULT_POSTURE)[0], end_effector(low, DEFAULT_POSTURE)[0])
    # E_low: the arm works in the vertical (y, z) plane through the base
    origins = [p.position for p in forward_kinematics(low, DEFAULT_POSTURE)[0]]
    assert np.allclose([o[0] for o in origins], ARM.base_position[0], atol=1e-12)
    # E_high: the upper arm points sideways, so the elbow is at shoulder height
    high = apply_elevation(ARM, ElbowElevation.E_HIGH)
    links, _ = forward_kinematics(high, [0, 0, 0, 0, 0, 0])
    assert links[2].position[1] == pytest.approx(high.base_position[1], abs=1e-12)


def test_anchored_elevation_keeps_start_point():
    for level in ElbowElevation:
        arm = anchored_elevation(ARM, level)
        assert np.allclose(end_effector(arm, DEFAULT_POSTURE)[0], DEFAULT_HOME_POINT, atol=1e-12)


def test_load_arm_round_trip(tmp_path):
    f = tmp_path / "arm.cfg"
    f.write_text("# geometry\nbase = 0.1, 0.2, 0.3\nlimit_deg = 150\n")
    arm = load_arm(f)
    assert np.allclose(arm.base_position, [0.1, 0.2, 0.3])
    assert arm.limit_deg == 150.0
    assert np.allclose(arm.offsets, ARM.offsets)


def test_arm_rejects_non_finite_offsets():
    with pytest.raises(ValueError):
        ArmModel(np.zeros(3), ARM.axes, np.full((6, 3), np.nan))


@settings(max_examples=100, deadline=None)
@given(joints, st.floats(-0.02, 0.02), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02))
def test_ik_step_output_in_limits_or_identical(q, dx, dy, dz):
    q = np.array(q)
    out = ik_step(ARM, q, [dx, dy, dz, 0, 0, 0], 0.01)
    assert np.all(np.abs(out) <= 160.0) or np.array_equal(out, q)


@settings(max_examples=100, deadline=None)
@given(joints, st.sampled_from(list(ElbowElevation)))
def test_reach_invariant_under_elevation(q, level):
    q = np.array(q)
    raised = apply_elevation(ARM, level)
    r0 = np.linalg.norm(end_effector(ARM, q)[0] - ARM.base_position)
    r1 = np.linalg.norm(end_effector(raised, q)[0] - raised.base_position)
    assert r1 == pytest.approx(r0, abs=1e-12)
