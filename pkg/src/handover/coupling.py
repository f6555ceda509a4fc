"""Interaction algorithms mapping grabber-tip motion to robot peg motion.

* Robot initiation (RI): a fixed forward program starting at trial onset.
* Participant initiation (PI): the same program, started once the tip has
  moved 10 mm from where it rested.
* Temporal alignment (TA): peg progress along the straight path equals the
  tip's depth progress toward the interaction depth.
* Spatiotemporal alignment (SA): the peg mirrors the tip (x, y follow,
  z reversed) with a depth-scaled offset and a constant 4 cm drop.

TA and SA stop updating once the tip has covered 97 % of its depth distance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .trajectory import min_jerk_eval

START_TRIGGER = 0.010
RETURN_TRIGGER = 0.020
FREEZE_FRACTION = 0.03
MIRROR = np.array([1.0, 1.0, -1.0])
VERTICAL_OFFSET = np.array([0.0, 0.04, 0.0])
ROBOT_INITIATION_MT = 1.0
RETURN_SPEEDUP = 1.5
_EPS = 1e-12


class CouplingKind(str, enum.Enum):
    ROBOT_INITIATION = "RI"
    PARTICIPANT_INITIATION = "PI"
    TEMPORAL_ALIGNMENT = "TA"
    SPATIOTEMPORAL_ALIGNMENT = "SA"

    @property
    def tip_driven(self) -> bool:
        return self in (CouplingKind.TEMPORAL_ALIGNMENT, CouplingKind.SPATIOTEMPORAL_ALIGNMENT)


@dataclass
class CouplingState:
    peg0: np.ndarray
    rec0: np.ndarray
    pos_int: np.ndarray
    z_int: float | None = None
    started: bool = False
    frozen: bool = False
    returning: bool = False
    freeze_fraction: float = FREEZE_FRACTION
    start_trigger: float = START_TRIGGER
    return_trigger: float = RETURN_TRIGGER
    mirror: np.ndarray = field(default_factory=lambda: MIRROR.copy())
    vertical_offset: np.ndarray = field(default_factory=lambda: VERTICAL_OFFSET.copy())
    # Which components of (peg0 - rec0) the SA offset removes; z is left out
    # because removing it as well would drive the peg past the participant.
    offset_axes: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 0.0]))
    position: np.ndarray | None = None

    def __post_init__(self):
        self.peg0 = np.asarray(self.peg0, dtype=float)
        self.rec0 = np.asarray(self.rec0, dtype=float)
        self.pos_int = np.asarray(self.pos_int, dtype=float)
        if self.z_int is None:
            self.z_int = 0.5 * (self.rec0[2] + self.peg0[2])
        lo, hi = sorted((self.rec0[2], self.peg0[2]))
        if not lo < self.z_int < hi:
            raise ValueError(f"interaction depth {self.z_int} not between receptacle and peg depths")
        if not 0.0 < self.freeze_fraction < 1.0:
            raise ValueError("freeze fraction must lie in (0, 1)")
        if self.position is None:
            self.position = self.peg0.copy()


def tip_progress(tip_z: float, state: CouplingState) -> float:
    """Unclamped fraction of the receptacle-to-interaction depth covered by the tip."""
    return (tip_z - state.rec0[2]) / (state.z_int - state.rec0[2])


def robot_initiation_pos(t, state: CouplingState, MT: float = ROBOT_INITIATION_MT):
    pos, _, _ = min_jerk_eval(state.peg0, state.pos_int, MT, t)
    return pos


def participant_initiation_trigger(tip, tip0, started: bool = False, threshold: float = START_TRIGGER) -> bool:
    """Latching 10 mm displacement trigger."""
    if started:
        return True
    return float(np.linalg.norm(np.asarray(tip) - np.asarray(tip0))) >= threshold - _EPS


def _freeze_check(frac: float, state: CouplingState) -> None:
    if frac >= 1.0 - state.freeze_fraction - _EPS:
        state.frozen = True


def temporal_alignment_pos(tip_z: float, state: CouplingState) -> np.ndarray:
    """Peg on the straight path at the tip's clamped depth progress.

    The frame on which progress first reaches 97 % is still computed; from
    then on the peg holds that position.
    """
    if state.frozen:
        return state.position.copy()
    frac = min(max(tip_progress(tip_z, state), 0.0), 1.0)
    state.position = state.peg0 + (state.pos_int - state.peg0) * frac
    _freeze_check(frac, state)
    return state.position.copy()


def sa_offset(tip_z: float, state: CouplingState) -> np.ndarray:
    frac = min(max(tip_progress(tip_z, state), 0.0), 1.0)
    return state.offset_axes * (state.peg0 - state.rec0) * frac + state.vertical_offset


def spatiotemporal_alignment_pos(tip, state: CouplingState) -> np.ndarray:
    if state.frozen:
        return state.position.copy()
    tip = np.asarray(tip, dtype=float)
    state.position = state.peg0 + state.mirror * (tip - state.rec0) - sa_offset(tip[2], state)
    _freeze_check(min(max(tip_progress(tip[2], state), 0.0), 1.0), state)
    return state.position.copy()


def return_triggered(tip, robot_tip, threshold: float = RETURN_TRIGGER) -> bool:
    """Tip-driven conditions: return once the tip is 20 mm from the robot tip."""
    return float(np.linalg.norm(np.asarray(tip) - np.asarray(robot_tip))) >= threshold - _EPS


class ReverseReturn:
    """Replay of a forward program backwards from ``t_from`` at 1.5x speed."""

    def __init__(self, forward: Callable[[float], np.ndarray], t_from: float, speedup: float = RETURN_SPEEDUP):
        self.forward = forward
        self.t_from = float(t_from)
        self.speedup = speedup

    @property
    def duration(self) -> float:
        return self.t_from / self.speedup

    def position(self, s: float) -> np.ndarray:
        return self.forward(max(self.t_from - self.speedup * s, 0.0))

    def done(self, s: float) -> bool:
        return s >= self.duration - _EPS


class TrackedReturn:
    """Tip-driven return for TA/SA.

    The robot retraces the straight line from where it stopped back to its
    start, at the tip's depth progress relative to the progress it had when
    the return was triggered. Progress only ever decreases.
    """

    def __init__(self, state: CouplingState, anchor, tip_z_at_trigger: float):
        self.state = state
        self.anchor = np.asarray(anchor, dtype=float)
        self.p0 = max(tip_progress(tip_z_at_trigger, state), _EPS)
        self.r = 1.0

    def position(self, tip_z: float) -> np.ndarray:
        r = min(max(tip_progress(tip_z, self.state) / self.p0, 0.0), 1.0)
        self.r = min(self.r, r)
        return self.state.peg0 + (self.anchor - self.state.peg0) * self.r

    def done(self) -> bool:
        return self.r <= 0.0


def return_policy(kind: CouplingKind, *, forward=None, t_from=None, state=None, anchor=None, tip_z=None):
    """Build the return program for a coupling kind.

    RI/PI reverse the forward program; TA/SA follow the tip back.
    """
    kind = CouplingKind(kind)
    if kind.tip_driven:
        return TrackedReturn(state, state.position if anchor is None else anchor, tip_z)
    return ReverseReturn(forward, t_from)
