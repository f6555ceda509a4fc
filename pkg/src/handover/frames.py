"""Table-centred coordinates, quaternion helpers and world<->table transforms.

Vectors are plain ``numpy`` arrays of shape ``(3,)`` in metres. Quaternions
are arrays ``(w, x, y, z)``. Rotations use the standard right-hand-rule
formulas applied to coordinate triples.

Note on handedness: the table axes (x rightward, y upward, z away from the
participant) form a left-handed triad in physical space. All algebra here is
ordinary right-hand-rule algebra on the coordinates, so a positive rotation
about +z turns +x toward +y, which the seated participant sees as
counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([float(x), float(y), float(z)])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError(f"cannot normalise quaternion {q!r}")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle_rad
    s = math.sin(h)
    return np.array([math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_about_z_deg(angle_deg: float) -> np.ndarray:
    h = math.radians(angle_deg) * 0.5
    return np.array([math.cos(h), 0.0, 0.0, math.sin(h)])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Rotation matrix to unit quaternion with ``w >= 0``."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return q if q[0] >= 0.0 else -q


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    w = q[0]
    u = np.asarray(q[1:], dtype=float)
    v = np.asarray(v, dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_rotvec(q) -> np.ndarray:
    """Rotation vector (axis * angle, radians) of ``q``, shortest arc."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    s = math.sqrt(float(q[1:] @ q[1:]))
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(s, q[0])
    return q[1:] * (angle / s)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError(f"non-finite position {p!r}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))


@dataclass(frozen=True)
class TableFrame:
    """Pose of the table's near-left corner expressed in world coordinates."""

    origin_world: np.ndarray
    rotation_world: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        object.__setattr__(self, "origin_world", np.asarray(self.origin_world, dtype=float).reshape(3))
        object.__setattr__(self, "rotation_world", quat_normalize(self.rotation_world))


def to_table(pose_world: Pose, frame: TableFrame) -> Pose:
    inv = quat_conj(frame.rotation_world)
    pos = quat_rotate(inv, pose_world.position - frame.origin_world)
    return Pose(pos, quat_mul(inv, pose_world.orientation))


def from_table(pose_table: Pose, frame: TableFrame) -> Pose:
    pos = quat_rotate(frame.rotation_world, pose_table.position) + frame.origin_world
    return Pose(pos, quat_mul(frame.rotation_world, pose_table.orientation))


def axis_angle_between(q1, q2, axis: str) -> float:
    """Angle in degrees between the images of a cardinal axis under two rotations.

    Comparing axis images sidesteps the quaternion double cover and ignores
    any twist about the queried axis itself.
    """
    e = np.zeros(3)
    e[AXES[axis]] = 1.0
    a = quat_rotate(q1, e)
    b = quat_rotate(q2, e)
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b)))
