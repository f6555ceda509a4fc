"""Six-joint serial arm: forward kinematics, geometric Jacobian and
pseudoinverse IK stepping.

Joint angles are degrees at the API surface; the Jacobian is per radian.
The default arm is a shoulder/elbow/wrist chain standing up from a base
behind the table. In the zero posture every link points along +y. Joint axes
(in the parent link frame) are z, x, x, y, x, y: J0 abducts the shoulder
about the depth axis, J1/J2/J4 pitch, J3 rolls the forearm and J5 rolls the
tool. The tool point is the top centre of the held peg.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .frames import Pose, matrix_to_quat, quat_conj, quat_mul, quat_to_rotvec
from .kvconfig import parse_floats, read_config

JOINT_LIMIT_DEG = 160.0
DEFAULT_POSTURE = np.array([0.0, 65.0, -140.0, 0.0, 75.0, 0.0])
# Peg top at the default posture, table frame.
DEFAULT_HOME_POINT = np.array([0.45, 0.28, 0.75])
UPPER_ARM, FOREARM, TOOL = 0.40, 0.50, 0.06
PINV_RCOND = 1e-8


class JointLimitError(ValueError):
    pass


class ElbowElevation(enum.Enum):
    E_LOW = 0.0
    E_MID = 45.0
    E_HIGH = 90.0


def _rot(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


@dataclass(frozen=True)
class ArmModel:
    base_position: np.ndarray
    axes: np.ndarray  # (6, 3) unit joint axes in the parent link frame
    offsets: np.ndarray  # (6, 3) joint i -> joint i+1 (last: joint 5 -> tool)
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    elevation_deg: float = 0.0
    limit_deg: float = JOINT_LIMIT_DEG

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float).reshape(6, 3)
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        offsets = np.asarray(self.offsets, dtype=float).reshape(6, 3)
        if not np.all(np.isfinite(offsets)):
            raise ValueError("link offsets must be finite")
        if not 0.0 < self.limit_deg <= 180.0:
            raise ValueError(f"joint limit {self.limit_deg} out of range")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "base_position", np.asarray(self.base_position, dtype=float).reshape(3))
        object.__setattr__(self, "base_rotation", np.asarray(self.base_rotation, dtype=float).reshape(3, 3))
        root = _rot(np.array([0.0, 0.0, 1.0]), math.radians(self.elevation_deg)) @ self.base_rotation
        object.__setattr__(self, "_root", root)

    @property
    def root_rotation(self) -> np.ndarray:
        return self._root

    def in_limits(self, joints) -> bool:
        return bool(np.all(np.abs(np.asarray(joints)) <= self.limit_deg))


def default_arm(home_point=DEFAULT_HOME_POINT, posture=DEFAULT_POSTURE) -> ArmModel:
    """Arm whose tool point sits at ``home_point`` in ``posture``."""
    axes = np.array([[0, 0, 1], [1, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    offsets = np.array(
        [[0, 0, 0], [0, UPPER_ARM, 0], [0, 0, 0], [0, FOREARM, 0], [0, 0, 0], [0, TOOL, 0]], dtype=float
    )
    probe = ArmModel(np.zeros(3), axes, offsets)
    reach = _chain(probe, np.radians(posture))[0][-1]
    return ArmModel(np.asarray(home_point, dtype=float) - reach, axes, offsets)


def load_arm(path: str | Path) -> ArmModel:
    """Read arm geometry from a key/value file.

    Keys: ``base`` (x,y,z), ``axis0``..``axis5``, ``offset0``..``offset5``
    (vectors, metres), optional ``base_rotation`` (9 row-major numbers),
    ``elevation_deg`` and ``limit_deg``. Missing keys fall back to the
    default arm.
    """
    cfg = read_config(path)
    base = default_arm()
    axes = np.array([parse_floats(cfg[f"axis{i}"], 3) if f"axis{i}" in cfg else base.axes[i] for i in range(6)])
    offsets = np.array(
        [parse_floats(cfg[f"offset{i}"], 3) if f"offset{i}" in cfg else base.offsets[i] for i in range(6)]
    )
    rot = np.array(parse_floats(cfg["base_rotation"], 9)).reshape(3, 3) if "base_rotation" in cfg else np.eye(3)
    return ArmModel(
        base_position=parse_floats(cfg["base"], 3) if "base" in cfg else base.base_position,
        axes=axes,
        offsets=offsets,
        base_rotation=rot,
        elevation_deg=float(cfg.get("elevation_deg", 0.0)),
        limit_deg=float(cfg.get("limit_deg", JOINT_LIMIT_DEG)),
    )


def _rots(axes: np.ndarray, q_rad) -> np.ndarray:
    """Rodrigues matrices for all joints at once, shape (n, 3, 3)."""
    c, s = np.cos(q_rad), np.sin(q_rad)
    C = 1.0 - c
    x, y, z = axes[:, 0], axes[:, 1], axes[:, 2]
    out = np.empty((len(axes), 3, 3))
    out[:, 0, 0] = c + x * x * C
    out[:, 0, 1] = x * y * C - z * s
    out[:, 0, 2] = x * z * C + y * s
    out[:, 1, 0] = y * x * C + z * s
    out[:, 1, 1] = c + y * y * C
    out[:, 1, 2] = y * z * C - x * s
    out[:, 2, 0] = z * x * C - y * s
    out[:, 2, 1] = z * y * C + x * s
    out[:, 2, 2] = c + z * z * C
    return out


def _chain(arm: ArmModel, q_rad) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Joint origins (7 incl. tool point), world joint axes (6) and link rotations."""
    local = _rots(arm.axes, np.asarray(q_rad, dtype=float))
    R = arm.root_rotation
    parents = np.empty((6, 3, 3))
    rotations = []
    for i in range(6):
        parents[i] = R
        R = R @ local[i]
        rotations.append(R)
    world_axes = np.einsum("nij,nj->ni", parents, arm.axes)
    steps = np.einsum("nij,nj->ni", np.array(rotations), arm.offsets)
    origins = np.empty((7, 3))
    origins[0] = arm.base_position
    np.cumsum(steps, axis=0, out=origins[1:])
    origins[1:] += arm.base_position
    return origins, world_axes, rotations


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, [1, 2, 0]] * b[:, [2, 0, 1]] - a[:, [2, 0, 1]] * b[:, [1, 2, 0]]


def _check(arm: ArmModel, joints) -> np.ndarray:
    q = np.asarray(joints, dtype=float).reshape(6)
    if not arm.in_limits(q):
        raise JointLimitError(f"joints {q} outside +/-{arm.limit_deg} deg")
    return q


def forward_kinematics(arm: ArmModel, joints) -> tuple[list[Pose], Pose]:
    """Link poses (at each joint origin, after its rotation) and the tool pose."""
    q = _check(arm, joints)
    origins, _, rotations = _chain(arm, np.radians(q))
    links = [Pose(origins[i], matrix_to_quat(rotations[i])) for i in range(6)]
    return links, Pose(origins[6], matrix_to_quat(rotations[-1]))


def end_effector(arm: ArmModel, joints) -> tuple[np.ndarray, np.ndarray]:
    """Tool point and rotation matrix; no limit check (hot path)."""
    origins, _, rotations = _chain(arm, np.radians(joints))
    return origins[6], rotations[-1]


def jacobian(arm: ArmModel, joints) -> np.ndarray:
    """Geometric Jacobian: rows are tool linear velocity then angular velocity."""
    q = _check(arm, joints)
    return _jacobian(arm, q)


def _jacobian(arm: ArmModel, q_deg) -> np.ndarray:
    origins, world_axes, _ = _chain(arm, np.radians(q_deg))
    J = np.empty((6, 6))
    J[:3] = _cross_rows(world_axes, origins[6] - origins[:6]).T
    J[3:] = world_axes.T
    return J


def pose_error(current: Pose, target: Pose) -> np.ndarray:
    """Six-vector (position difference, rotation vector) taking current to target."""
    dq = quat_mul(target.orientation, quat_conj(current.orientation))
    return np.concatenate([target.position - current.position, quat_to_rotvec(dq)])


def ik_step(arm: ArmModel, joints, desired_pose_delta, dt: float) -> np.ndarray:
    """One pseudoinverse update for a desired tool pose change over ``dt``.

    If any resulting joint would leave the limits the input joints are
    returned unchanged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = np.asarray(joints, dtype=float).reshape(6)
    delta = np.asarray(desired_pose_delta, dtype=float).reshape(6)
    if not np.any(delta):
        return q.copy()
    qdot = np.linalg.pinv(_jacobian(arm, q), rcond=PINV_RCOND) @ (delta / dt)
    new = q + np.degrees(qdot * dt)
    if np.any(np.abs(new) > arm.limit_deg):
        return q.copy()
    return new


@dataclass
class IKResult:
    joints: np.ndarray
    converged: bool
    iterations: int
    position_error: float
    orientation_error: float


def solve_to_target(
    arm: ArmModel,
    joints,
    target: Pose,
    tol: float = 1e-5,
    max_iters: int = 200,
    max_step: float = 0.05,
    with_orientation: bool = True,
) -> IKResult:
    """Iterate :func:`ik_step` toward ``target``; non-convergence is flagged, not raised.

    Each iteration moves at most ``max_step`` metres (or radians) so the
    linearisation stays valid. ``tol`` bounds both the position error (m) and
    the orientation error (rad).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = _check(arm, joints).copy()
    for it in range(max_iters + 1):
        p, R = end_effector(arm, q)
        err = pose_error(Pose(p, matrix_to_quat(R)), target)
        if not with_orientation:
            err[3:] = 0.0
        ep, eo = float(np.linalg.norm(err[:3])), float(np.linalg.norm(err[3:]))
        if ep <= tol and eo <= tol:
            return IKResult(q, True, it, ep, eo)
        if it == max_iters:
            break
        scale = min(1.0, max_step / max(ep, eo))
        if with_orientation:
            new = ik_step(arm, q, err * scale, 1.0)
        else:
            J = _jacobian(arm, q)[:3]
            new = q + np.degrees(np.linalg.pinv(J, rcond=PINV_RCOND) @ (err[:3] * scale))
            if np.any(np.abs(new) > arm.limit_deg):
                new = q
        if np.array_equal(new, q):
            break
        q = new
    return IKResult(q, False, it, ep, eo)


def apply_elevation(arm: ArmModel, level: ElbowElevation) -> ArmModel:
    """Abduct the whole chain about the depth axis at the shoulder."""
    return replace(arm, elevation_deg=ElbowElevation(level).value)


def anchored_elevation(arm: ArmModel, level: ElbowElevation, posture=DEFAULT_POSTURE) -> ArmModel:
    """Elevated arm whose tool point in ``posture`` stays where it was.

    The chain is abducted about the shoulder and the base is then shifted
    so every elevation presents the peg at the same start position.
    """
    before = end_effector(arm, posture)[0]
    raised = apply_elevation(arm, level)
    after = end_effector(raised, posture)[0]
    return replace(raised, base_position=raised.base_position + (before - after))


def track_step(arm: ArmModel, joints, target_pos, target_quat, dt: float):
    """One per-frame tracking update toward a commanded tool pose.

    Same rule as :func:`ik_step` with the pose error as the desired change,
    but the chain is evaluated once. Returns the new joints, the tool
    position before the update, the position error and whether the limit
    clamp rejected the step.
    """
    q = np.asarray(joints, dtype=float)
    origins, world_axes, rotations = _chain(arm, np.radians(q))
    p = origins[6]
    dq = quat_mul(target_quat, quat_conj(matrix_to_quat(rotations[-1])))
    delta = np.concatenate([np.asarray(target_pos) - p, quat_to_rotvec(dq)])
    if not np.any(delta):
        return q.copy(), p, 0.0, False
    J = np.empty((6, 6))
    J[:3] = _cross_rows(world_axes, p - origins[:6]).T
    J[3:] = world_axes.T
    new = q + np.degrees(np.linalg.pinv(J, rcond=PINV_RCOND) @ (delta / dt) * dt)
    err = float(np.linalg.norm(delta[:3]))
    if np.any(np.abs(new) > arm.limit_deg):
        return q.copy(), p, err, True
    return new, p, err, False
