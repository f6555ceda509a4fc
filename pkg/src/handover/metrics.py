"""Movement segmentation, per-trial dependent variables and exclusion rules.

All analysis works on the grabber tip's depth (z) position and velocity after
resampling to 90 Hz and low-pass filtering. Times are seconds since the
onset beep.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sigproc import RATE_HZ, TimeSeries, butter_lowpass, gradient_velocity, resample_90

FRONT_EDGE_Z = 0.35
COVERED_FRACTION = 0.20
ONSET_FRACTION = 0.03
PICKUP_END_MARGIN = 0.010
DROP_MIN_VZ = -0.2
DROP_FRACTION = 0.05
PRE_RETURN_WINDOW = 0.100
JUMP_THRESHOLD = 0.05
DISENGAGE_MARGIN = 0.050
TIMING_TOLERANCE = 0.03
TIMING_PARTICIPANT_LIMIT = 0.25
MISSED_PICKUP_LIMIT = 0.50


class UnsegmentableError(ValueError):
    """The velocity profile does not allow the phase boundaries to be found."""


# -- segmentation -----------------------------------------------------------


def detect_pickup_onset(tip_z, tip_vz, start_z: float, target_z: float, search_from: int = 0) -> int:
    """First sample that is near the front edge, early in the reach and moving.

    Falls back to the first sample above the velocity threshold when the
    participant was already moving at onset.
    """
    z = np.asarray(tip_z, dtype=float)
    vz = np.asarray(tip_vz, dtype=float)
    vmax = float(np.max(vz[search_from:]))
    if vmax <= 0.0:
        raise UnsegmentableError("tip never moves forward")
    thr = ONSET_FRACTION * vmax
    span = target_z - start_z
    covered = (z - start_z) / span if span > 0 else np.zeros_like(z)
    moving = vz > thr
    idx = np.arange(z.size)
    ok = (idx >= search_from) & (z < FRONT_EDGE_Z) & (covered < COVERED_FRACTION) & moving
    hits = np.flatnonzero(ok)
    if hits.size:
        return int(hits[0])
    hits = np.flatnonzero(moving & (idx >= search_from))
    if hits.size == 0:
        raise UnsegmentableError("tip z-velocity never exceeds the onset threshold")
    return int(hits[0])


def detect_pickup_end(tip_z, peg_final_z: float, onset: int) -> int:
    """First sample after onset within 1 cm of the final peg depth or of the tip's own maximum."""
    z = np.asarray(tip_z, dtype=float)
    zmax = float(np.max(z[onset:]))
    after = z[onset:]
    hit = (after >= peg_final_z - PICKUP_END_MARGIN) | (after >= zmax - PICKUP_END_MARGIN)
    return onset + int(np.flatnonzero(hit)[0])


def _local_minima(v: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Indices in [lo, hi) where ``v`` has a local minimum (edges count one-sided)."""
    out = []
    n = v.size
    for i in range(lo, hi):
        left = v[i - 1] if i > 0 else np.inf
        right = v[i + 1] if i + 1 < n else np.inf
        if v[i] < left and v[i] <= right:
            out.append(i)
    return np.array(out, dtype=int)


def detect_dropoff(tip_z, tip_vz, return_index: int, rate: float = RATE_HZ) -> tuple[int, int]:
    """Onset and offset of the backward (drop-off) movement.

    Minima below -0.2 m/s are searched from the robot's return onward. If
    the velocity crosses zero between the return and the first such minimum,
    the velocity is shifted by the mean of the 100 ms before the return
    (only when that mean is negative). Onset is the first sample from 100 ms
    before the return up to the first minimum below 5 % of the trial's
    minimal velocity. Without any qualifying local minimum, onset is the
    sample after the last threshold crossing before the window's global
    minimum, provided that minimum is itself below -0.2 m/s.
    """
    z = np.asarray(tip_z, dtype=float)
    vz = np.asarray(tip_vz, dtype=float)
    n = vz.size
    if not 0 <= return_index < n:
        raise UnsegmentableError("robot return outside the trial")
    vmin = float(np.min(vz))
    thr = DROP_FRACTION * vmin
    minima = _local_minima(vz, return_index, n)
    minima = minima[vz[minima] < DROP_MIN_VZ] if minima.size else minima
    pre = max(0, return_index - int(round(PRE_RETURN_WINDOW * rate)))
    if minima.size:
        first = int(minima[0])
        v = vz
        seg = vz[return_index : first + 1]
        if np.any(np.signbit(seg[1:]) != np.signbit(seg[:-1])):
            base = float(np.mean(vz[pre:return_index])) if return_index > pre else 0.0
            if base < 0.0:
                v = vz - base
        below = np.flatnonzero(v[pre : first + 1] < thr)
        onset = pre + int(below[0]) if below.size else first
    else:
        g = return_index + int(np.argmin(vz[return_index:]))
        if vz[g] >= DROP_MIN_VZ:
            raise UnsegmentableError("no backward movement faster than -0.2 m/s after the return")
        above = np.flatnonzero(vz[:g] >= thr)
        onset = int(above[-1]) + 1 if above.size else 0
    after = np.flatnonzero((z[onset + 1 :] < FRONT_EDGE_Z) & (vz[onset + 1 :] > thr))
    offset = onset + 1 + int(after[0]) if after.size else n - 1
    return onset, offset


@dataclass(frozen=True)
class SegmentedTrial:
    pickup_onset: int
    pickup_end: int
    pickup: int | None
    robot_return: int
    dropoff_onset: int
    dropoff_offset: int

    def __post_init__(self):
        if not self.pickup_onset < self.pickup_end:
            raise UnsegmentableError("pickup phase is empty")
        if not self.dropoff_onset < self.dropoff_offset:
            raise UnsegmentableError("drop-off phase is empty")


# -- trial data ---------------------------------------------------------------


@dataclass
class TrialData:
    """Tip and robot-peg kinematics of one trial plus the logged events."""

    t: np.ndarray
    tip: np.ndarray  # (n, 3)
    peg: np.ndarray  # (n, 3) robot-held peg top
    holder: np.ndarray  # (n,) "Robot" / "Grabber"
    flags: list[set[str]]

    @classmethod
    def from_log(cls, log: dict[str, np.ndarray]) -> "TrialData":
        tip = np.column_stack([log["tip_x"], log["tip_y"], log["tip_z"]])
        peg = np.column_stack([log["peg_x"], log["peg_y"], log["peg_z"]])
        flags = [set(f.split("|")) if f else set() for f in log["flags"]]
        return cls(np.asarray(log["t"], dtype=float), tip, peg, np.asarray(log["holder"]), flags)

    @classmethod
    def from_frames(cls, frames) -> "TrialData":
        return cls(
            np.array([f.t for f in frames]),
            np.array([f.tip_position for f in frames]),
            np.array([f.peg_position for f in frames]),
            np.array([f.holder.value for f in frames]),
            [set(f.flags) for f in frames],
        )

    def first_flag(self, name: str) -> int | None:
        for i, f in enumerate(self.flags):
            if name in f:
                return i
        return None

    @property
    def onset_index(self) -> int:
        return int(np.argmin(np.abs(self.t)))

    @property
    def pickup_index(self) -> int | None:
        hits = np.flatnonzero(self.holder == "Grabber")
        return int(hits[0]) if hits.size else None

    @property
    def return_index(self) -> int | None:
        return self.first_flag("returning")

    @property
    def timed_out(self) -> bool:
        return self.first_flag("timeout") is not None

    @property
    def peg_final_z(self) -> float:
        return float(np.min(self.peg[:, 2]))


@dataclass
class Prepared:
    t: np.ndarray
    tip: np.ndarray
    vz: np.ndarray


def prepare(trial: TrialData, zero_phase: bool = True) -> Prepared:
    """Resample, filter and differentiate the tip trajectory."""
    rs = resample_90(TimeSeries(trial.t, trial.tip))
    filt = butter_lowpass(rs, zero_phase=zero_phase)
    vel = gradient_velocity(TimeSeries(filt.t, filt.values[:, 2]))
    return Prepared(filt.t, filt.values, vel.values)


def has_jump(tip_z, threshold: float = JUMP_THRESHOLD) -> bool:
    return bool(np.any(np.abs(np.diff(np.asarray(tip_z, dtype=float))) > threshold))


def _index_at(grid: np.ndarray, t: float) -> int:
    return int(np.argmin(np.abs(grid - t)))


def segment(trial: TrialData, prep: Prepared) -> SegmentedTrial:
    ret = trial.return_index
    if ret is None:
        raise UnsegmentableError("robot never returned")
    z, vz = prep.tip[:, 2], prep.vz
    onset_i = _index_at(prep.t, 0.0)
    on = detect_pickup_onset(z, vz, float(z[onset_i]), trial.peg_final_z, search_from=onset_i)
    end = detect_pickup_end(z, trial.peg_final_z, on)
    pick = trial.pickup_index
    pick = _index_at(prep.t, trial.t[pick]) if pick is not None else None
    if pick is not None and pick < end:
        end = max(pick, on + 1)
    ret_i = _index_at(prep.t, trial.t[ret])
    d_on, d_off = detect_dropoff(z, vz, ret_i)
    return SegmentedTrial(on, end, pick, ret_i, d_on, d_off)


# -- dependent variables -------------------------------------------------------


def path_length(points) -> float:
    """Cumulative 3D travel minus the straight start-to-end distance."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0.0
    travel = float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))
    return max(travel - float(np.linalg.norm(p[-1] - p[0])), 0.0)


def velocity_symmetry(t, v, onset: int, offset: int, backward: bool = False) -> float:
    """Time to peak velocity as a fraction of the phase duration."""
    seg = np.asarray(v[onset : offset + 1], dtype=float)
    peak = int(np.argmin(seg) if backward else np.argmax(seg))
    return float((t[onset + peak] - t[onset]) / (t[offset] - t[onset]))


METRIC_FIELDS = (
    "pickup_initiation",
    "trial_duration",
    "movement_duration",
    "pickup_duration",
    "dropoff_duration",
    "manipulation_duration",
    "interaction_duration",
    "dropoff_reaction_time",
    "pickup_symmetry",
    "dropoff_symmetry",
    "pickup_path",
    "manipulation_path",
    "interaction_path",
    "dropoff_path",
    "endpoint_x",
    "endpoint_y",
    "endpoint_z",
    "success",
)


@dataclass
class MetricsRow:
    participant: int
    trial: int
    condition: str
    block: int = 0
    practice: bool = False
    excluded: str = ""
    pickup_initiation: float = math.nan
    trial_duration: float = math.nan
    movement_duration: float = math.nan
    pickup_duration: float = math.nan
    dropoff_duration: float = math.nan
    manipulation_duration: float = math.nan
    interaction_duration: float = math.nan
    dropoff_reaction_time: float = math.nan
    pickup_symmetry: float = math.nan
    dropoff_symmetry: float = math.nan
    pickup_path: float = math.nan
    manipulation_path: float = math.nan
    interaction_path: float = math.nan
    dropoff_path: float = math.nan
    endpoint_x: float = math.nan
    endpoint_y: float = math.nan
    endpoint_z: float = math.nan
    success: float = 0.0
    tags: dict[str, str] = field(default_factory=dict)  # not written; for exclusion rules


def compute_metrics(trial: TrialData, prep: Prepared, seg: SegmentedTrial, row: MetricsRow) -> MetricsRow:
    t, tip = prep.t, prep.tip
    on, end, pick, d_on, d_off = seg.pickup_onset, seg.pickup_end, seg.pickup, seg.dropoff_onset, seg.dropoff_offset
    row.pickup_initiation = float(t[on])
    row.trial_duration = float(t[d_off])
    row.movement_duration = float(t[d_off] - t[on])
    row.pickup_duration = float(t[end] - t[on])
    row.dropoff_duration = float(t[d_off] - t[d_on])
    row.interaction_duration = max(float(t[d_on] - t[end]), 0.0)
    row.pickup_symmetry = velocity_symmetry(t, prep.vz, on, end)
    row.dropoff_symmetry = velocity_symmetry(t, prep.vz, d_on, d_off, backward=True)
    row.pickup_path = path_length(tip[on : end + 1])
    row.interaction_path = path_length(tip[end : max(d_on, end) + 1])
    row.dropoff_path = path_length(tip[d_on : d_off + 1])
    raw_end = _index_at(trial.t, t[end])
    rel = trial.tip[raw_end] - trial.peg[raw_end]
    row.endpoint_x, row.endpoint_y, row.endpoint_z = (float(v) for v in rel)
    row.success = 1.0 if pick is not None else 0.0
    if pick is not None:
        row.manipulation_duration = float(t[pick] - t[end])
        row.manipulation_path = path_length(tip[end : pick + 1])
        row.dropoff_reaction_time = float(t[d_on] - t[pick])
    return row


def analyze_trial(trial: TrialData, row: MetricsRow, zero_phase: bool = True) -> MetricsRow:
    """Full per-trial pipeline; failures are recorded in ``row.excluded``."""
    if trial.timed_out:
        row.excluded = "timeout"
        return row
    if has_jump(trial.tip[:, 2]):
        row.excluded = "jump"
        return row
    try:
        prep = prepare(trial, zero_phase)
        seg = segment(trial, prep)
    except (UnsegmentableError, ValueError) as exc:
        row.excluded = "unsegmentable"
        row.tags["reason"] = str(exc)
        return row
    compute_metrics(trial, prep, seg, row)
    ret = trial.return_index
    row.tags["max_tip_z_before_return"] = repr(float(np.max(trial.tip[: ret + 1, 2])))
    row.tags["peg_final_z"] = repr(trial.peg_final_z)
    return row


# -- exclusions -----------------------------------------------------------------


def is_disengaged(max_tip_z_before_return: float, peg_final_z: float) -> bool:
    return max_tip_z_before_return < peg_final_z - DISENGAGE_MARGIN


def timing_deviates(played_mt: float, raw_mt: float) -> bool:
    return abs(played_mt - raw_mt) > TIMING_TOLERANCE * raw_mt


@dataclass
class ExclusionReport:
    trials: int
    retained: int
    by_reason: dict[str, int]
    participants_excluded: list[int]

    def text(self) -> str:
        lines = [f"trials: {self.trials}", f"retained: {self.retained}"]
        for reason in sorted(self.by_reason):
            lines.append(f"excluded ({reason}): {self.by_reason[reason]}")
        ids = ", ".join(str(p) for p in self.participants_excluded) or "none"
        lines.append(f"participants excluded: {ids}")
        return "\n".join(lines) + "\n"


def apply_exclusions(rows: list[MetricsRow], experiment: int) -> tuple[list[MetricsRow], ExclusionReport]:
    """Trial and participant exclusions; practice trials never count.

    Trial rules: timeout, signal jump, unsegmentable; Exp 2 playback timing
    off by more than 3 %; Exp 3/4 disengagement (tip never within 50 mm of
    the final peg depth before the robot returned).
    Participant rules: Exp 2 timing exclusions in more than 25 % of the
    trials of any condition; Exp 3/4 missed pickups in more than 50 % of
    trials.
    """
    rows = [r for r in rows if not r.practice]
    for r in rows:
        if r.excluded:
            continue
        if experiment == 2 and "played_mt" in r.tags:
            if timing_deviates(float(r.tags["played_mt"]), float(r.tags["raw_mt"])):
                r.excluded = "timing"
        if experiment in (3, 4) and "max_tip_z_before_return" in r.tags:
            if is_disengaged(float(r.tags["max_tip_z_before_return"]), float(r.tags["peg_final_z"])):
                r.excluded = "disengaged"
    dropped: set[int] = set()
    for pid in sorted({r.participant for r in rows}):
        mine = [r for r in rows if r.participant == pid]
        if experiment == 2:
            for cond in sorted({r.condition for r in mine}):
                cell = [r for r in mine if r.condition == cond]
                if sum(r.excluded == "timing" for r in cell) > TIMING_PARTICIPANT_LIMIT * len(cell):
                    dropped.add(pid)
        if experiment in (3, 4):
            missed = sum(r.success == 0.0 for r in mine)
            if missed > MISSED_PICKUP_LIMIT * len(mine):
                dropped.add(pid)
    by_reason: dict[str, int] = {}
    for r in rows:
        if r.excluded:
            by_reason[r.excluded] = by_reason.get(r.excluded, 0) + 1
    retained = [r for r in rows if not r.excluded and r.participant not in dropped]
    return retained, ExclusionReport(len(rows), len(retained), by_reason, sorted(dropped))


# -- CSV -------------------------------------------------------------------------

ID_FIELDS = ("participant", "block", "trial", "condition", "practice", "excluded")
CSV_FIELDS = ID_FIELDS + METRIC_FIELDS + ("tags",)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics(path: str | Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in rows:
            tags = ";".join(f"{k}={v}" for k, v in sorted(r.tags.items()))
            w.writerow([_fmt(getattr(r, f)) for f in ID_FIELDS + METRIC_FIELDS] + [tags])


def read_metrics(path: str | Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_FIELDS:
            raise ValueError(f"{path}:1: unexpected metrics header")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_FIELDS):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_FIELDS)} fields, got {len(rec)}")
            vals = dict(zip(CSV_FIELDS, rec))
            try:
                kw = {
                    "participant": int(vals["participant"]),
                    "block": int(vals["block"]),
                    "trial": int(vals["trial"]),
                    "condition": vals["condition"],
                    "practice": vals["practice"] == "1",
                    "excluded": vals["excluded"],
                }
                for name in METRIC_FIELDS:
                    kw[name] = float(vals[name]) if vals[name] else math.nan
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            tags = dict(item.split("=", 1) for item in vals["tags"].split(";") if item)
            rows.append(MetricsRow(tags=tags, **kw))
    return rows
