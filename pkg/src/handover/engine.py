"""Fixed-step (90 Hz) trial protocol.

States run Idle -> SetScene -> PreTrial -> Trial -> SaveTrialData, and from
there either back to SetScene (more trials in the block) or to Idle. Frames
are logged from PreTrial onward. Time ``t`` in the log is seconds since the
onset beep, so PreTrial frames have negative times.

The robot's peg pose in the log is the commanded pose; the arm follows it
with one pseudoinverse update per frame. Once the grabber holds the peg, the
held peg's reference point is the grabber tip.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .actor import Actor, ActorPolicy, WorldView
from .coupling import (
    CouplingKind,
    CouplingState,
    ReverseReturn,
    TrackedReturn,
    participant_initiation_trigger,
    return_triggered,
    spatiotemporal_alignment_pos,
    temporal_alignment_pos,
)
from .frames import Pose, axis_angle_between, quat_about_z_deg, quat_mul
from .kinematics import (
    DEFAULT_POSTURE,
    ArmModel,
    ElbowElevation,
    anchored_elevation,
    default_arm,
    end_effector,
    matrix_to_quat,
    solve_to_target,
    track_step,
)
from .trajectory import PlaybackSeries, ProfileKind, RotationPlan, TrajectorySpec, angular_min_jerk, min_jerk_eval

DT = 1.0 / 90.0
RADIUS = 0.007
HOLD_TIME = 0.200
DWELL = 0.550
ORIENTATION_TOL_DEG = 10.0
HOME_TOL = 0.005
WATCHDOG = 10.0
HOMING_MT = 0.4
IK_FAIL_ERR = 0.005  # tracking residual beyond the latest command change
_EPS = 1e-9

RECEPTACLE_TOP = np.array([0.45, 0.06, 0.05])
Z_INT = 0.40
APPROACH = 0.35  # forward peg travel toward the participant (m)

LOG_HEADER = (
    ["t", "state"]
    + [f"tip_{c}" for c in ("x", "y", "z", "qw", "qx", "qy", "qz")]
    + [f"peg_{c}" for c in ("x", "y", "z", "qw", "qx", "qy", "qz")]
    + [f"j{i}" for i in range(6)]
    + ["holder", "flags"]
)


class ProtocolState(str, enum.Enum):
    IDLE = "Idle"
    SET_SCENE = "SetScene"
    PRE_TRIAL = "PreTrial"
    TRIAL = "Trial"
    SAVE_TRIAL_DATA = "SaveTrialData"


TRANSITIONS = {
    ProtocolState.IDLE: {ProtocolState.SET_SCENE},
    ProtocolState.SET_SCENE: {ProtocolState.PRE_TRIAL},
    ProtocolState.PRE_TRIAL: {ProtocolState.TRIAL},
    ProtocolState.TRIAL: {ProtocolState.SAVE_TRIAL_DATA},
    ProtocolState.SAVE_TRIAL_DATA: {ProtocolState.SET_SCENE, ProtocolState.IDLE},
}


class TransitionError(RuntimeError):
    pass


def check_transitions(states) -> list[tuple[int, str, str]]:
    """Violations of the protocol graph in a state sequence, as (index, from, to)."""
    states = [ProtocolState(s) for s in states]
    return [
        (i, a.value, b.value)
        for i, (a, b) in enumerate(zip(states, states[1:]), start=1)
        if b not in TRANSITIONS[a]
    ]


class Holder(str, enum.Enum):
    ROBOT = "Robot"
    GRABBER = "Grabber"


@dataclass(frozen=True)
class TrialConfig:
    coupling: CouplingKind = CouplingKind.ROBOT_INITIATION
    profile: ProfileKind = ProfileKind.MIN_JERK
    mt: float = 1.0
    target_xy: tuple[float, float] = (0.0, 0.0)
    depth_jitter: float = 0.0
    rotation: RotationPlan | None = None
    playback: PlaybackSeries | None = None  # displacements from the peg start
    elevation: ElbowElevation = ElbowElevation.E_LOW
    dwell: float | None = None
    orientation_criterion: bool = False
    watchdog: float = WATCHDOG
    sa_literal_offset: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coupling", CouplingKind(self.coupling))
        object.__setattr__(self, "profile", ProfileKind(self.profile))
        object.__setattr__(self, "elevation", ElbowElevation(self.elevation))
        if self.mt <= 0:
            raise ValueError("movement time must be positive")
        if self.watchdog <= 0:
            raise ValueError("watchdog must be positive")

    @property
    def pretrial_rotation(self) -> bool:
        return self.rotation is not None and self.rotation.window[1] <= 0.0


@dataclass
class TrialEvents:
    onset: float | None = None
    robot_start: float | None = None
    robot_arrival: float | None = None
    pickup: float | None = None
    return_start: float | None = None
    dropoff: float | None = None
    success: bool = False
    timeout: bool = False
    actor_reach_onset: float | None = None
    actor_dropoff_onset: float | None = None

    def ordered(self) -> bool:
        seq = [self.onset, self.robot_start, self.robot_arrival, self.pickup, self.return_start, self.dropoff]
        seq = [s for s in seq if s is not None]
        return all(a <= b + _EPS for a, b in zip(seq, seq[1:]))


@dataclass(frozen=True)
class FrameRecord:
    """One logged frame. Poses are stored as raw arrays; see :attr:`tip` and :attr:`peg`."""

    frame: int
    t: float
    state: ProtocolState
    tip_position: np.ndarray
    tip_orientation: np.ndarray
    peg_position: np.ndarray
    peg_orientation: np.ndarray
    joints: np.ndarray
    holder: Holder
    flags: tuple[str, ...] = ()

    @property
    def tip(self) -> Pose:
        return Pose(self.tip_position, self.tip_orientation)

    @property
    def peg(self) -> Pose:
        return Pose(self.peg_position, self.peg_orientation)

    def row(self) -> list[str]:
        vals = [*self.tip_position, *self.tip_orientation, *self.peg_position, *self.peg_orientation, *self.joints]
        out = [repr(float(self.t)), self.state.value]
        out += [repr(float(v)) for v in vals]
        return out + [self.holder.value, "|".join(self.flags)]


@dataclass
class HoldClock:
    """Consecutive-time-inside tracker for the pre-trial criterion."""

    duration: float = HOLD_TIME
    since: float | None = None

    def update(self, t: float, inside: bool) -> bool:
        if not inside:
            self.since = None
            return False
        if self.since is None:
            self.since = t
        return t - self.since >= self.duration - _EPS


def pre_trial_check(tip, receptacle_top, clock: HoldClock, t: float, radius: float = RADIUS) -> bool:
    dist = float(np.linalg.norm(np.asarray(tip) - np.asarray(receptacle_top)))
    return clock.update(t, dist <= radius + _EPS)


def pickup_check(tip: Pose, peg_top: Pose, orientation_criterion: bool = False, radius: float = RADIUS) -> bool:
    if float(np.linalg.norm(tip.position - peg_top.position)) > radius + _EPS:
        return False
    if not orientation_criterion:
        return True
    return all(
        axis_angle_between(tip.orientation, peg_top.orientation, ax) <= ORIENTATION_TOL_DEG + _EPS
        for ax in ("x", "y")
    )


def dwell_expired(events: TrialEvents, t: float, dwell: float | None) -> bool:
    """Exp-3/4 dwell: the robot gives up if the peg is still unclaimed after ``dwell``."""
    if dwell is None or events.robot_arrival is None or events.pickup is not None:
        return False
    return t - events.robot_arrival > dwell + _EPS


def dropoff_check(peg_center, receptacle_top, radius: float = RADIUS) -> bool:
    return float(np.linalg.norm(np.asarray(peg_center) - np.asarray(receptacle_top))) <= radius + _EPS


@dataclass
class TrialResult:
    config: TrialConfig
    events: TrialEvents
    frames: list[FrameRecord]
    states: list[ProtocolState]
    ik_fail_frames: int = 0

    def write_log(self, path: str | Path) -> None:
        write_frame_log(path, self.frames)


def write_frame_log(path: str | Path, frames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for f in frames:
            w.writerow(f.row())


def read_frame_log(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a frame log; numeric columns as float arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LOG_HEADER:
            raise ValueError(f"{path}:1: unexpected frame-log header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(LOG_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(LOG_HEADER)} fields, got {len(row)}")
            rows.append(row)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(LOG_HEADER):
        col = [r[j] for r in rows]
        if name in ("state", "holder", "flags"):
            out[name] = np.array(col, dtype=object)
        else:
            try:
                out[name] = np.array(col, dtype=float)
            except ValueError as exc:
                bad = next(i for i, v in enumerate(col) if not _is_float(v))
                raise ValueError(f"{path}:{bad + 2}: bad number in column {name!r}") from exc
    return out


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


class TrialEngine:
    """One trial, stepped one frame at a time."""

    def __init__(
        self,
        config: TrialConfig,
        policy: ActorPolicy,
        rng: np.random.Generator,
        arm: ArmModel | None = None,
        entry: ProtocolState = ProtocolState.IDLE,
        last_in_block: bool = True,
        dt: float = DT,
    ):
        if entry not in (ProtocolState.IDLE, ProtocolState.SAVE_TRIAL_DATA):
            raise ValueError("a trial starts from Idle or from the previous trial's SaveTrialData")
        self.config = config
        self.policy = policy
        self.dt = dt
        self.rng = rng
        self.last_in_block = last_in_block
        self.base_arm = arm if arm is not None else default_arm()
        self.state = entry
        self.states = [entry]
        self.events = TrialEvents()
        self.frames: list[FrameRecord] = []
        self.ik_fail_frames = 0
        self.frame = 0
        self._transition(ProtocolState.SET_SCENE)
        self._set_scene()
        self._transition(ProtocolState.PRE_TRIAL)

    # -- protocol bookkeeping

    def _transition(self, new: ProtocolState) -> None:
        if new not in TRANSITIONS[self.state]:
            raise TransitionError(f"illegal transition {self.state.value} -> {new.value}")
        self.state = new
        self.states.append(new)

    @property
    def finished(self) -> bool:
        return self.state in (ProtocolState.SAVE_TRIAL_DATA, ProtocolState.IDLE) and len(self.states) > 2

    # -- scene

    def _set_scene(self) -> None:
        cfg = self.config
        self.arm = anchored_elevation(self.base_arm, cfg.elevation, DEFAULT_POSTURE)
        self.home, R = end_effector(self.arm, DEFAULT_POSTURE)
        self.q_home = matrix_to_quat(R)
        self.rec0 = RECEPTACLE_TOP.copy()
        peg0 = self.home.copy()
        gx, gy = cfg.target_xy
        pos_int = peg0 + np.array([gx, gy, -APPROACH + cfg.depth_jitter])
        self.coupling = CouplingState(peg0=peg0, rec0=self.rec0, pos_int=pos_int, z_int=Z_INT)
        if cfg.sa_literal_offset:
            self.coupling.offset_axes = np.ones(3)
        self.theta0 = cfg.rotation.theta0 if cfg.rotation is not None else 0.0
        if cfg.playback is not None:
            pb = cfg.playback
            series = PlaybackSeries(pb.t - pb.t[0], pb.position - pb.position[0] + peg0, pb.orientation)
            self.traj = TrajectorySpec(ProfileKind.PLAYBACK, peg0, peg0, 1.0, playback=series)
        else:
            self.traj = TrajectorySpec(cfg.profile, peg0, pos_int, cfg.mt, rotation=cfg.rotation)
        self.joints = DEFAULT_POSTURE.astype(float)
        if self.theta0:
            target = Pose(self.home, quat_mul(quat_about_z_deg(self.theta0), self.q_home))
            res = solve_to_target(self.arm, self.joints, target)
            self.joints = res.joints
        self.holder = Holder.ROBOT
        self.robot_pos = peg0.copy()
        self.robot_quat = quat_about_z_deg(self.theta0)
        self._last_cmd = peg0.copy()
        self.clock = HoldClock()
        self.onset_frame: int | None = None
        self.armed_frame: int | None = None
        self.started = False
        self.returner = None
        self.homing = None
        self.pi_tip0 = self.rec0.copy()
        self.actor = Actor(self.policy, self.rec0, Z_INT, self.dt, self.rng)
        self.history: deque[WorldView] = deque(maxlen=self.policy.delay_frames(self.dt) + 1)
        self.history.append(self._view(-self.dt))

    def _view(self, t: float) -> WorldView:
        if self.holder is Holder.GRABBER:
            pos, quat = self.actor.pos.copy(), self.actor.quat.copy()
        else:
            pos, quat = self.robot_pos.copy(), self.robot_quat.copy()
        return WorldView(
            t,
            pos,
            quat,
            self.holder.value,
            self.events.return_start is not None,
            self.onset_frame is not None,
        )

    # -- robot program

    def _rotation_angle(self, t_rel: float) -> float:
        plan = self.config.rotation
        return self.theta0 if plan is None else float(angular_min_jerk(plan, t_rel))

    def _forward_pose(self, tf: float):
        pos, _ = self.traj.position_velocity(tf)
        if self.traj.kind is ProfileKind.PLAYBACK:
            return np.asarray(pos, dtype=float), self.traj.orientation(tf)
        return np.asarray(pos, dtype=float), quat_about_z_deg(self._rotation_angle(tf))

    def _robot_command(self, t_tr: float, tip: np.ndarray) -> None:
        cfg, ev, cs = self.config, self.events, self.coupling
        kind = cfg.coupling
        if not self.started:
            if kind is CouplingKind.PARTICIPANT_INITIATION:
                self.started = participant_initiation_trigger(tip, self.pi_tip0, threshold=cs.start_trigger)
            else:
                self.started = True
            if self.started:
                ev.robot_start = t_tr
                cs.started = True
        if self.homing is not None:
            s0, start = self.homing
            pos, _, _ = min_jerk_eval(start, cs.peg0, HOMING_MT, t_tr - s0)
            self.robot_pos = pos
            return
        if self.returner is not None:
            if isinstance(self.returner, ReverseReturn):
                s = t_tr - ev.return_start
                tf = max(self.returner.t_from - self.returner.speedup * s, 0.0)
                self.robot_pos, self.robot_quat = self._forward_pose(tf)
            else:
                self.robot_pos = self.returner.position(tip[2])
            return
        if not self.started:
            return
        if kind.tip_driven:
            if kind is CouplingKind.TEMPORAL_ALIGNMENT:
                self.robot_pos = temporal_alignment_pos(tip[2], cs)
            else:
                self.robot_pos = spatiotemporal_alignment_pos(tip, cs)
            if cs.frozen and ev.robot_arrival is None:
                ev.robot_arrival = t_tr
        else:
            tf = t_tr - ev.robot_start
            self.robot_pos, self.robot_quat = self._forward_pose(tf)
            if ev.robot_arrival is None and tf >= self.traj.MT - _EPS:
                ev.robot_arrival = t_tr

    def _begin_return(self, t_tr: float, tip: np.ndarray) -> None:
        ev, cs = self.events, self.coupling
        ev.return_start = t_tr
        cs.returning = True
        if self.config.coupling.tip_driven:
            self.returner = TrackedReturn(cs, self.robot_pos.copy(), tip[2])
        else:
            tf = min(t_tr - ev.robot_start, self.traj.MT)
            self.returner = ReverseReturn(self._forward_pose, tf)

    # -- stepping

    def step(self) -> FrameRecord:
        """Advance one frame and return its record."""
        if self.finished:
            raise TransitionError("trial already finished")
        t_int = self.frame * self.dt
        obs = self.history[0]
        tip_pos, tip_quat = self.actor.act(obs, t_int)
        cfg, ev = self.config, self.events
        flags: list[str] = []

        if self.state is ProtocolState.PRE_TRIAL:
            if self.armed_frame is None and pre_trial_check(tip_pos, self.rec0, self.clock, t_int):
                self.armed_frame = self.frame
            if self.armed_frame is not None and cfg.pretrial_rotation:
                plan = cfg.rotation
                lead = (self.frame - self.armed_frame) * self.dt + plan.window[0]
                self.robot_quat = quat_about_z_deg(self._rotation_angle(min(lead, 0.0)))
                if lead >= -_EPS:
                    self._onset()
            elif self.armed_frame is not None:
                self._onset()

        if self.state is ProtocolState.TRIAL:
            t_tr = (self.frame - self.onset_frame) * self.dt
            self._robot_command(t_tr, tip_pos)
            if (
                self.holder is Holder.ROBOT
                and self.started
                and self.returner is None
                and pickup_check(Pose(tip_pos, tip_quat), Pose(self.robot_pos, self.robot_quat), cfg.orientation_criterion)
            ):
                self.holder = Holder.GRABBER
                ev.pickup = t_tr
                ev.success = True
                if not cfg.coupling.tip_driven:
                    self._begin_return(t_tr, tip_pos)
            elif dwell_expired(ev, t_tr, cfg.dwell) and self.returner is None:
                self._begin_return(t_tr, tip_pos)
            elif (
                cfg.coupling.tip_driven
                and self.holder is Holder.GRABBER
                and self.returner is None
                and return_triggered(tip_pos, self.robot_pos)
            ):
                self._begin_return(t_tr, tip_pos)

        self.joints, ee_pos, err, clamped = self._track()
        lag = float(np.linalg.norm(self.robot_pos - self._last_cmd))
        self._last_cmd = np.array(self.robot_pos, dtype=float)
        if clamped or err - lag > IK_FAIL_ERR:
            flags.append("ik_fail")
            self.ik_fail_frames += 1

        if self.state is ProtocolState.TRIAL:
            t_tr = (self.frame - self.onset_frame) * self.dt
            if self.returner is not None or ev.pickup is not None:
                done_drop = dropoff_check(tip_pos, self.rec0) and (ev.pickup is not None or ev.return_start is not None)
                if done_drop and ev.dropoff is None:
                    ev.dropoff = t_tr
                home = float(np.linalg.norm(ee_pos - self.coupling.peg0)) <= HOME_TOL + _EPS
                if ev.dropoff is not None and not home and self.homing is None and isinstance(self.returner, TrackedReturn):
                    self.homing = (t_tr, self.robot_pos.copy())
                if ev.dropoff is not None and home and self._robot_settled(t_tr):
                    self._end()
            if not self.finished and t_tr >= cfg.watchdog - _EPS:
                ev.timeout = True
                flags.append("timeout")
                self._end()

        flags += self._state_flags()
        rec = FrameRecord(
            self.frame,
            t_int,
            ProtocolState.PRE_TRIAL if self.state is ProtocolState.PRE_TRIAL else ProtocolState.TRIAL,
            tip_pos,
            tip_quat,
            np.array(self.robot_pos, dtype=float),
            np.array(self.robot_quat, dtype=float),
            self.joints.copy(),
            self.holder,
            tuple(flags),
        )
        self.frames.append(rec)
        self.history.append(self._view(t_int))
        self.frame += 1
        return rec

    def _robot_settled(self, t_tr: float) -> bool:
        if self.homing is not None:
            return t_tr - self.homing[0] >= HOMING_MT - _EPS
        if isinstance(self.returner, ReverseReturn):
            return t_tr - self.events.return_start >= self.returner.duration - _EPS
        return self.returner is not None and self.returner.done()

    def _state_flags(self) -> list[str]:
        out = []
        if self.onset_frame is not None:
            out.append("beeped")
        if self.started:
            out.append("started")
        if self.coupling.frozen:
            out.append("frozen")
        if self.returner is not None:
            out.append("returning")
        if self.homing is not None:
            out.append("homing")
        return out

    def _track(self):
        target_q = quat_mul(self.robot_quat, self.q_home)
        return track_step(self.arm, self.joints, self.robot_pos, target_q, self.dt)

    def _onset(self) -> None:
        self.onset_frame = self.frame
        self.events.onset = 0.0
        self._transition(ProtocolState.TRIAL)

    def _end(self) -> None:
        self._transition(ProtocolState.SAVE_TRIAL_DATA)
        if self.last_in_block:
            self._transition(ProtocolState.IDLE)

    def run(self, max_frames: int | None = None) -> TrialResult:
        """Step until the trial ends; frame times are then made relative to onset."""
        limit = max_frames if max_frames is not None else int(math.ceil((self.config.watchdog + 30.0) / self.dt))
        while not self.finished:
            if self.frame >= limit:
                raise RuntimeError("trial did not finish within the frame limit")
            self.step()
        onset = self.onset_frame * self.dt
        self.frames = [
            replace(f, t=(f.frame - self.onset_frame) * self.dt) for f in self.frames
        ]
        ev = self.events
        if self.actor.reach_onset is not None:
            ev.actor_reach_onset = self.actor.reach_onset - onset
        if self.actor.dropoff_onset is not None:
            ev.actor_dropoff_onset = self.actor.dropoff_onset - onset
        return TrialResult(self.config, ev, self.frames, list(self.states), self.ik_fail_frames)


def run_trial(config: TrialConfig, policy: ActorPolicy, seed, **kwargs) -> TrialResult:
    rng = np.random.default_rng(seed)
    return TrialEngine(config, policy, rng, **kwargs).run()
