"""Synthetic participants that move the grabber tip.

Each actor sees the world through a fixed visuomotor delay and moves with
minimum-jerk segments. A segment can start from any position, velocity and
acceleration, so re-planning mid-flight keeps the motion smooth.

* Waiter: waits until the peg has moved and come to rest, then makes one
  reach to it.
* Tracker: starts at the perceived onset beep and re-aims at the delayed
  peg top on every frame.
* Leader: anticipates the beep and heads for the interaction depth, then
  tracks the peg like the Tracker.

All three take the peg home to the receptacle once they see the snap, or once
they see the robot give up and return.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .frames import IDENTITY_QUAT

MAX_SPEED = 2.0  # m/s, plausible upper bound for a hand-held tool


class ActorKind(str, enum.Enum):
    WAITER = "Waiter"
    TRACKER = "Tracker"
    LEADER = "Leader"


@dataclass(frozen=True)
class ActorPolicy:
    kind: ActorKind = ActorKind.TRACKER
    delay: float = 0.150
    reach_mt: float = 0.8
    noise_sd: float = 0.0
    dropoff_mt: float = 0.8
    min_replan: float = 0.25
    anticipation: float = 0.08  # Leader: head start before the expected beep
    hold_time: float = 0.200  # Leader: expected time from rest to beep
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ActorKind(self.kind))
        if not 0.0 <= self.delay <= 0.5:
            raise ValueError(f"visuomotor delay {self.delay} s outside [0, 0.5]")
        if self.noise_sd < 0:
            raise ValueError("noise sd must be non-negative")
        for name in ("reach_mt", "dropoff_mt", "min_replan"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def delay_frames(self, dt: float) -> int:
        return int(round(self.delay / dt))


@dataclass(frozen=True)
class WorldView:
    """What the participant can see: the active peg and a few cues."""

    t: float
    peg_position: np.ndarray
    peg_orientation: np.ndarray
    holder: str = "Robot"
    returning: bool = False
    beeped: bool = False


def quintic(x0, v0, a0, xf, T: float, s: float):
    """Minimum-jerk segment from (x0, v0, a0) to rest at ``xf`` after ``T``.

    Returns position, velocity and acceleration at time ``s`` (clamped to
    [0, T]).
    """
    s = min(max(s, 0.0), T)
    d = xf - x0
    c3 = (20.0 * d - 12.0 * v0 * T - 3.0 * a0 * T * T) / (2.0 * T**3)
    c4 = (-30.0 * d + 16.0 * v0 * T + 3.0 * a0 * T * T) / (2.0 * T**4)
    c5 = (12.0 * d - 6.0 * v0 * T - a0 * T * T) / (2.0 * T**5)
    c2 = 0.5 * a0
    pos = x0 + s * (v0 + s * (c2 + s * (c3 + s * (c4 + s * c5))))
    vel = v0 + s * (2 * c2 + s * (3 * c3 + s * (4 * c4 + s * 5 * c5)))
    acc = 2 * c2 + s * (6 * c3 + s * (12 * c4 + s * 20 * c5))
    return pos, vel, acc


@dataclass
class _Segment:
    start: float
    x0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    target: np.ndarray
    T: float

    def at(self, t: float):
        return quintic(self.x0, self.v0, self.a0, self.target, self.T, t - self.start)

    def done(self, t: float) -> bool:
        return t - self.start >= self.T - 1e-12


class Actor:
    """Stateful tip generator; call :meth:`act` once per frame."""

    def __init__(self, policy: ActorPolicy, rest, z_int: float, dt: float, rng: np.random.Generator | None = None):
        self.policy = policy
        self.rest = np.asarray(rest, dtype=float)
        self.z_int = float(z_int)
        self.dt = dt
        self.rng = rng if rng is not None else np.random.default_rng(policy.seed)
        self.pos = self.rest.copy()
        self.vel = np.zeros(3)
        self.acc = np.zeros(3)
        self.quat = IDENTITY_QUAT.copy()
        self.phase = "rest"
        self.segment: _Segment | None = None
        self.reach_onset: float | None = None
        self.dropoff_onset: float | None = None
        self._aim = np.zeros(3)
        self._pursuit_start = 0.0
        self._peg_start: np.ndarray | None = None
        self._peg_moved = False
        self._last_obs: WorldView | None = None

    def _noise(self) -> np.ndarray:
        sd = self.policy.noise_sd
        return self.rng.normal(0.0, sd, 3) if sd > 0 else np.zeros(3)

    def _plan(self, t: float, target, T: float) -> None:
        self.segment = _Segment(t, self.pos.copy(), self.vel.copy(), self.acc.copy(), np.asarray(target, float), T)

    def _advance(self, t: float) -> None:
        if self.segment is None:
            return
        p, v, a = self.segment.at(t)
        step = p - self.pos
        limit = MAX_SPEED * 0.95 * self.dt
        n = float(np.linalg.norm(step))
        if n > limit:
            p = self.pos + step * (limit / n)
            v = (p - self.pos) / self.dt
            a = np.zeros(3)
        self.pos, self.vel, self.acc = p, v, a

    def _start_pursuit(self, t: float) -> None:
        self.phase = "pursue"
        self._pursuit_start = t
        self._aim = self._noise()

    def _pursue(self, obs: WorldView, t: float) -> None:
        p = self.policy
        elapsed = t - self._pursuit_start
        fade = max(0.0, 1.0 - elapsed / p.reach_mt)
        target = obs.peg_position + self._aim * fade
        T = max(p.reach_mt - elapsed, p.min_replan)
        # plan from the state at t - dt and read off one frame ahead
        self.segment = _Segment(t - self.dt, self.pos.copy(), self.vel.copy(), self.acc.copy(), target, T)

    def _start_dropoff(self, t: float) -> None:
        self.phase = "dropoff"
        self.dropoff_onset = t - self.dt
        err = np.clip(self._noise(), -0.003, 0.003)
        self._plan(t - self.dt, self.rest + err, self.policy.dropoff_mt)

    def act(self, obs: WorldView, t: float):
        """Tip position and orientation for the frame at time ``t``."""
        p = self.policy
        if self._peg_start is None:
            self._peg_start = obs.peg_position.copy()
        if self.phase not in ("dropoff", "done") and (obs.holder == "Grabber" or obs.returning):
            self._start_dropoff(t)

        if self.phase == "rest":
            if p.kind is ActorKind.TRACKER and obs.beeped:
                self.reach_onset = t - self.dt
                self._start_pursuit(t)
            elif p.kind is ActorKind.LEADER and t >= p.hold_time - p.anticipation - 1e-9:
                self.reach_onset = t - self.dt
                self.phase = "lead"
                aim = np.array([obs.peg_position[0], obs.peg_position[1], self.z_int])
                self._plan(t - self.dt, aim, p.reach_mt)
            elif p.kind is ActorKind.WAITER and obs.beeped:
                if np.linalg.norm(obs.peg_position - self._peg_start) > 0.010:
                    self._peg_moved = True
                still = (
                    self._last_obs is not None
                    and np.linalg.norm(obs.peg_position - self._last_obs.peg_position) < 0.005 * self.dt
                )
                if self._peg_moved and still:
                    self.reach_onset = t - self.dt
                    self.phase = "reach"
                    self._plan(t - self.dt, obs.peg_position + self._noise(), p.reach_mt)
        elif self.phase == "reach" and self.segment.done(t):
            self._start_pursuit(t)
        elif self.phase == "lead" and t - self.segment.start >= 0.5 * p.reach_mt:
            self._start_pursuit(self.reach_onset)
        elif self.phase == "dropoff" and self.segment.done(t):
            self.phase = "done"

        if self.phase == "pursue":
            self._pursue(obs, t)
        if self.phase != "rest":
            self._advance(t)
        if self.phase not in ("dropoff", "done"):
            self.quat = np.asarray(obs.peg_orientation, dtype=float).copy()
        self._last_obs = obs
        return self.pos.copy(), self.quat.copy()
