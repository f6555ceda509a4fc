"""Closed-form peg motion programs.

Four translational profiles (minimum jerk, constant velocity, constant
acceleration, biphasic), an angular minimum-jerk rotation plan, depth jitter
and spline playback of recorded series. Every evaluator accepts scalar or
array time, is defined on ``[0, MT]`` and clamps outside it: before the
start the peg sits at ``X0``, after the end it dwells at ``XE``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .frames import quat_about_z_deg, quat_normalize

PLAYBACK_HEADER = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]


class ProfileKind(str, enum.Enum):
    MIN_JERK = "MinJerk"
    CONST_VEL = "ConstVel"
    CONST_ACCEL = "ConstAccel"
    BIPHASIC = "Biphasic"
    PLAYBACK = "Playback"


def _prep(X0, XE, MT, t):
    if MT <= 0:
        raise ValueError(f"movement time must be positive, got {MT}")
    X0 = np.asarray(X0, dtype=float)
    XE = np.asarray(XE, dtype=float)
    t = np.clip(np.asarray(t, dtype=float), 0.0, MT)
    # broadcast time over trailing spatial dims
    tt = t.reshape(t.shape + (1,) * X0.ndim)
    return X0, XE, tt


def _pin(pos, X0, XE, tt, MT):
    """Exact endpoint values where time is clamped."""
    return np.where(tt <= 0.0, X0, np.where(tt >= MT, XE, pos))


@dataclass(frozen=True)
class MinJerkCoeffs:
    C3: np.ndarray
    C4: np.ndarray
    C5: np.ndarray

    @classmethod
    def from_endpoints(cls, X0, XE, MT: float) -> "MinJerkCoeffs":
        X0 = np.asarray(X0, dtype=float)
        XE = np.asarray(XE, dtype=float)
        return cls(
            C3=(-20.0 * X0 + 20.0 * XE) / (2.0 * MT**3),
            C4=(15.0 * X0 - 15.0 * XE) / MT**4,
            C5=(-12.0 * X0 + 12.0 * XE) / (2.0 * MT**5),
        )


def min_jerk_eval(X0, XE, MT: float, t):
    """Position, velocity and acceleration of the minimum-jerk polynomial."""
    X0, XE, tt = _prep(X0, XE, MT, t)
    c = MinJerkCoeffs.from_endpoints(X0, XE, MT)
    t2 = tt * tt
    t3 = t2 * tt
    pos = X0 + t3 * c.C3 + t3 * tt * c.C4 + t3 * t2 * c.C5
    vel = 3.0 * t2 * c.C3 + 4.0 * t3 * c.C4 + 5.0 * t2 * t2 * c.C5
    acc = 6.0 * tt * c.C3 + 12.0 * t2 * c.C4 + 20.0 * t3 * c.C5
    ends = (tt <= 0.0) | (tt >= MT)
    return _pin(pos, X0, XE, tt, MT), np.where(ends, 0.0 * vel, vel), np.where(ends, 0.0 * acc, acc)


def _active(t, MT, shape):
    t = np.asarray(t, dtype=float)
    return ((t >= 0.0) & (t <= MT)).reshape(shape)


def const_vel_eval(X0, XE, MT: float, t):
    X0, XE, tt = _prep(X0, XE, MT, t)
    d = XE - X0
    pos = _pin(X0 + d / MT * tt, X0, XE, tt, MT)
    vel = np.where(_active(t, MT, tt.shape), d / MT, 0.0 * d)
    return pos, vel


def const_accel_eval(X0, XE, MT: float, t):
    X0, XE, tt = _prep(X0, XE, MT, t)
    d = XE - X0
    pos = _pin(0.5 * (2.0 * d / MT**2) * tt**2 + X0, X0, XE, tt, MT)
    vel = np.where(_active(t, MT, tt.shape), 2.0 * d / MT**2 * tt, 0.0 * d)
    return pos, vel


def biphasic_eval(X0, XE, MT: float, t):
    """Two back-to-back triangular velocity humps with a stop at half time.

    Phase boundaries sit at quarters of the movement time.
    """
    X0, XE, tt = _prep(X0, XE, MT, t)
    d = XE - X0
    k = 4.0 * d / MT**2
    v = 2.0 * d / MT
    q1, q2, q3 = MT / 4.0, MT / 2.0, 3.0 * MT / 4.0
    s1 = tt - q1
    s2 = tt - q2
    s3 = tt - q3
    p1 = X0 + k * tt**2
    p2 = X0 + 0.25 * d + s1 * v - k * s1**2
    p3 = X0 + 0.5 * d + k * s2**2
    p4 = X0 + 0.75 * d + s3 * v - k * s3**2
    v1 = 2.0 * k * tt
    v2 = v - 2.0 * k * s1
    v3 = 2.0 * k * s2
    v4 = v - 2.0 * k * s3
    c1, c2, c3 = tt < q1, tt < q2, tt < q3
    pos = _pin(np.where(c1, p1, np.where(c2, p2, np.where(c3, p3, p4))), X0, XE, tt, MT)
    vel = np.where(c1, v1, np.where(c2, v2, np.where(c3, v3, v4)))
    vel = np.where(_active(t, MT, tt.shape), vel, 0.0 * d)
    return pos, vel


@dataclass(frozen=True)
class RotationPlan:
    """Peg tilt about the depth axis, degrees from vertical.

    The window is in seconds relative to translation onset.
    """

    theta0: float
    thetaE: float
    window: tuple[float, float]

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError(f"rotation window must have start < end, got {self.window}")

    @property
    def duration(self) -> float:
        return self.window[1] - self.window[0]


ROTATION_WINDOWS = {
    "early": (0.0, 0.6),
    "late": (0.6, 1.2),
    "synced": (0.0, 1.2),
    "pretrial": (-0.4, 0.0),
}


def angular_min_jerk(plan: RotationPlan, t):
    t_start, t_end = plan.window
    t = np.asarray(t, dtype=float)
    pos, _, _ = min_jerk_eval(plan.theta0, plan.thetaE, t_end - t_start, t - t_start)
    return pos if pos.ndim else float(pos)


def draw_depth_jitter(rng: np.random.Generator, half_range: float = 0.02) -> float:
    return float(rng.uniform(-half_range, half_range))


@dataclass(frozen=True)
class PlaybackSeries:
    t: np.ndarray  # (n,)
    position: np.ndarray  # (n, 3)
    orientation: np.ndarray  # (n, 4)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size == 0:
            raise ValueError("playback series is empty")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("playback timestamps must be strictly increasing")
        q = np.asarray(self.orientation, dtype=float).reshape(-1, 4).copy()
        # keep consecutive quaternions in one hemisphere before splining
        for i in range(1, len(q)):
            if q[i] @ q[i - 1] < 0:
                q[i] = -q[i]
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "orientation", q)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


def read_playback(path: str | Path) -> PlaybackSeries:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header != PLAYBACK_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PLAYBACK_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: playback series is empty")
    a = np.array(rows)
    return PlaybackSeries(a[:, 0], a[:, 1:4], a[:, 4:8])


def write_playback(path: str | Path, series: PlaybackSeries, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAYBACK_HEADER)
        for t, p, q in zip(series.t, series.position, series.orientation):
            w.writerow([repr(float(v)) for v in (t, *p, *q)])


def playback_eval(series: PlaybackSeries, t):
    """Natural cubic spline through the samples; clamped outside the series."""
    if len(series.t) == 1:
        return series.position[0].copy(), series.orientation[0].copy()
    tq = np.clip(t, series.t[0], series.t[-1])
    pos = CubicSpline(series.t, series.position, bc_type="natural")(tq)
    q = CubicSpline(series.t, series.orientation, bc_type="natural")(tq)
    return pos, q / np.linalg.norm(q, axis=-1, keepdims=True)


class _Playback:
    """Spline cache so per-frame evaluation does not refit."""

    def __init__(self, series: PlaybackSeries):
        self.series = series
        if len(series.t) > 1:
            self.pos = CubicSpline(series.t, series.position, bc_type="natural")
            self.vel = self.pos.derivative()
            self.rot = CubicSpline(series.t, series.orientation, bc_type="natural")

    def __call__(self, t: float):
        s = self.series
        if len(s.t) == 1:
            return s.position[0].copy(), np.zeros(3), s.orientation[0].copy()
        tq = min(max(t + s.t[0], s.t[0]), s.t[-1])
        v = self.vel(tq) if s.t[0] < t + s.t[0] < s.t[-1] else np.zeros(3)
        return self.pos(tq), v, quat_normalize(self.rot(tq))


@dataclass(frozen=True)
class TrajectorySpec:
    """A peg motion program, evaluated relative to translation onset."""

    kind: ProfileKind
    X0: np.ndarray
    XE: np.ndarray
    MT: float
    rotation: RotationPlan | None = None
    playback: PlaybackSeries | None = None
    base_orientation_deg: float = 0.0

    def __post_init__(self):
        kind = ProfileKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ProfileKind.PLAYBACK:
            if self.playback is None:
                raise ValueError("Playback trajectories need a series")
            object.__setattr__(self, "X0", self.playback.position[0].copy())
            object.__setattr__(self, "XE", self.playback.position[-1].copy())
            object.__setattr__(self, "MT", self.playback.duration)
        if self.MT <= 0:
            raise ValueError(f"movement time must be positive, got {self.MT}")
        object.__setattr__(self, "X0", np.asarray(self.X0, dtype=float).reshape(3))
        object.__setattr__(self, "XE", np.asarray(self.XE, dtype=float).reshape(3))
        if kind is ProfileKind.PLAYBACK:
            object.__setattr__(self, "_pb", _Playback(self.playback))

    def position_velocity(self, t):
        k = self.kind
        if k is ProfileKind.MIN_JERK:
            p, v, _ = min_jerk_eval(self.X0, self.XE, self.MT, t)
            return p, v
        if k is ProfileKind.CONST_VEL:
            return const_vel_eval(self.X0, self.XE, self.MT, t)
        if k is ProfileKind.CONST_ACCEL:
            return const_accel_eval(self.X0, self.XE, self.MT, t)
        if k is ProfileKind.BIPHASIC:
            return biphasic_eval(self.X0, self.XE, self.MT, t)
        p, v, _ = self._pb(float(t))
        return p, v

    def orientation(self, t: float) -> np.ndarray:
        if self.kind is ProfileKind.PLAYBACK:
            return self._pb(float(t))[2]
        if self.rotation is None:
            return quat_about_z_deg(self.base_orientation_deg)
        return quat_about_z_deg(angular_min_jerk(self.rotation, t))

    @property
    def peak_speed(self) -> float:
        """Largest analytic speed along the path (used for sanity bounds)."""
        dist = float(np.linalg.norm(self.XE - self.X0))
        factor = {
            ProfileKind.MIN_JERK: 1.875,
            ProfileKind.CONST_VEL: 1.0,
            ProfileKind.CONST_ACCEL: 2.0,
            ProfileKind.BIPHASIC: 2.0,
        }.get(self.kind)
        if factor is None:
            ts = np.linspace(0.0, self.MT, 200)
            return float(max(np.linalg.norm(self._pb(float(s))[1]) for s in ts))
        return factor * dist / self.MT


def time_to_fraction(spec: TrajectorySpec, fraction: float, tol: float = 1e-12) -> float:
    """First time the displacement along the path reaches ``fraction``.

    Bisection on the (monotone) progress; used to check when each profile
    shows how far it is going.
    """
    d = spec.XE - spec.X0
    dd = float(d @ d)

    def prog(t):
        p, _ = spec.position_velocity(t)
        return float((p - spec.X0) @ d) / dd

    lo, hi = 0.0, spec.MT
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if prog(mid) >= fraction:
            hi = mid
        else:
            lo = mid
    return hi
