"""Experiment presets, batch execution and the analysis/report stages.

A batch directory holds ``run.cfg`` (the resolved configuration),
``manifest.csv`` (one row per trial with its events) and one frame log per
trial under ``logs/``. Every random draw comes from a substream keyed by
(master seed, participant, purpose, trial), so results do not depend on
execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import stats as st
from .actor import ActorKind, ActorPolicy
from .coupling import CouplingKind
from .engine import DWELL, ProtocolState, TrialConfig, TrialEngine, check_transitions, read_frame_log
from .kinematics import ElbowElevation
from .kvconfig import ConfigError, parse_bool, parse_floats, parse_list, read_config
from .metrics import METRIC_FIELDS, MetricsRow, TrialData, analyze_trial, apply_exclusions, read_metrics, write_metrics
from .sigproc import CUTOFF_HZ, ORDER
from .synthetic import playback_name
from .trajectory import ROTATION_WINDOWS, ProfileKind, RotationPlan, read_playback


class RunnerError(RuntimeError):
    """Base class; ``code`` is the CLI exit status for the category."""

    code = 1


class InputError(RunnerError):
    code = 3


class EmptyInputError(RunnerError):
    code = 4


class DegenerateError(RunnerError):
    code = 5


class OutputError(RunnerError):
    code = 6


ELEVATION_NAMES = {"E_low": ElbowElevation.E_LOW, "E_mid": ElbowElevation.E_MID, "E_high": ElbowElevation.E_HIGH}

# Canonical condition order per experiment (report and matrix columns).
CONDITION_ORDER = {
    1: ("RI", "PI", "TA", "SA"),
    3: ("MinJerk", "ConstVel", "ConstAccel", "Biphasic"),
    4: ("early", "late", "synced", "pretrial"),
}

METRIC_NAMES = {
    "pickup_initiation": "Pickup Initiation",
    "trial_duration": "Overall Trial Duration",
    "movement_duration": "Movement Duration",
    "pickup_duration": "Pickup Duration",
    "dropoff_duration": "Drop-off Duration",
    "manipulation_duration": "Manipulation Duration",
    "interaction_duration": "Interaction Duration",
    "dropoff_reaction_time": "Drop-off Reaction Time",
    "pickup_symmetry": "Pickup Velocity Symmetry",
    "dropoff_symmetry": "Drop-off Velocity Symmetry",
    "pickup_path": "Pickup Path Length",
    "manipulation_path": "Manipulation Path Length",
    "interaction_path": "Interaction Path Length",
    "dropoff_path": "Drop-off Path Length",
    "endpoint_x": "Pickup Endpoint X",
    "endpoint_y": "Pickup Endpoint Y",
    "endpoint_z": "Pickup Endpoint Z",
    "success": "Peg-Pickup Success",
}


# -- configuration ---------------------------------------------------------------


def _parse_grid(value: str) -> tuple[tuple[float, float], ...]:
    cells = [c for c in value.split(";") if c.strip()]
    return tuple(tuple(parse_floats(c, 2)) for c in cells)


def _range(value: str) -> tuple[float, float]:
    v = parse_floats(value)
    if len(v) == 1:
        return (v[0], v[0])
    if len(v) != 2 or v[0] > v[1]:
        raise ConfigError(f"expected 'lo, hi', got {value!r}")
    return (v[0], v[1])


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: int
    conditions: tuple[str, ...]
    grid: tuple[tuple[float, float], ...]
    reps: int = 24
    blocks: int = 4
    participants: int = 24
    seed: int = 1
    practice_first: int = 0
    practice_per_block: int = 0
    mt: float = 1.0
    coupling: str = "RI"
    profile: str = "MinJerk"
    elevation: str = "E_low"
    jitter: bool = False
    jitter_range: float = 0.02
    dwell: bool = False
    orientation_criterion: bool = False
    watchdog: float = 10.0
    sa_literal_offset: bool = False
    actor: str = "Tracker"
    actor_delay: tuple[float, float] = (0.10, 0.20)
    actor_reach_mt: tuple[float, float] = (0.70, 0.90)
    actor_dropoff_mt: tuple[float, float] = (0.70, 0.90)
    actor_noise_sd: float = 0.002
    elevations: tuple[str, ...] = ("E_low", "E_mid", "E_high")
    theta0: tuple[float, ...] = (70.0, 110.0)
    thetaE: tuple[float, ...] = (-20.0, 20.0)
    playback_dir: str = ""

    def __post_init__(self):
        if self.experiment not in (1, 2, 3, 4):
            raise ConfigError(f"experiment must be 1..4, got {self.experiment}")
        if len(self.grid) != 4:
            raise ConfigError(f"the position grid needs 4 cells, got {len(self.grid)}")
        if self.reps < 1 or self.participants < 1 or self.blocks < 1:
            raise ConfigError("reps, blocks and participants must be positive")
        if self.practice_first < 0 or self.practice_per_block < 0:
            raise ConfigError("practice counts must be non-negative")
        ActorKind(self.actor)
        CouplingKind(self.coupling)
        ProfileKind(self.profile)
        for e in self.elevations + (self.elevation,):
            if e not in ELEVATION_NAMES:
                raise ConfigError(f"unknown elbow elevation {e!r}")
        if self.experiment == 1:
            for c in self.conditions:
                CouplingKind(c)
        if self.experiment == 3:
            for c in self.conditions:
                ProfileKind(c)
        if self.experiment == 4:
            for c in self.conditions:
                if c not in ROTATION_WINDOWS:
                    raise ConfigError(f"unknown rotation timing {c!r}")

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(kv) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for req in ("experiment", "conditions", "grid"):
            if req not in kv:
                raise ConfigError(f"missing config key {req!r}")
        out = {}
        try:
            for k, v in kv.items():
                if k in ("experiment", "reps", "blocks", "participants", "seed", "practice_first", "practice_per_block"):
                    out[k] = int(v)
                elif k in ("mt", "jitter_range", "watchdog", "actor_noise_sd"):
                    out[k] = float(v)
                elif k in ("jitter", "dwell", "orientation_criterion", "sa_literal_offset"):
                    out[k] = parse_bool(v)
                elif k in ("actor_delay", "actor_reach_mt", "actor_dropoff_mt"):
                    out[k] = _range(v)
                elif k in ("conditions", "elevations"):
                    out[k] = tuple(parse_list(v))
                elif k in ("theta0", "thetaE"):
                    out[k] = tuple(parse_floats(v))
                elif k == "grid":
                    out[k] = _parse_grid(v)
                else:
                    out[k] = v
            return cls(**out)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_mapping(read_config(path))

    def to_text(self) -> str:
        """Flat key/value text that :meth:`from_mapping` reads back unchanged."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "on" if v else "off"
            elif f.name == "grid":
                s = "; ".join(f"{x!r}, {y!r}" for x, y in v)
            elif isinstance(v, tuple):
                s = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"


def load_preset(name_or_path: str | Path, **overrides) -> ExperimentConfig:
    kv = read_config(name_or_path)
    kv.update({k: str(v) for k, v in overrides.items()})
    return ExperimentConfig.from_mapping(kv)


# -- trial plan ------------------------------------------------------------------


@dataclass(frozen=True)
class TrialPlan:
    participant: int
    trial: int  # 0-based within the participant, practice included
    block: int
    condition: str
    practice: bool
    position: int  # 1-based grid cell
    coupling: str
    profile: str
    elevation: str = "E_low"
    partner: str = ""
    timing: str = ""
    theta0: float = math.nan
    thetaE: float = math.nan
    playback: str = ""
    first_in_block: bool = False
    last_in_block: bool = False


def _seed(cfg: ExperimentConfig, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.seed, spawn_key=key)


def _order_rng(cfg, pid):
    return np.random.default_rng(_seed(cfg, pid, 0))


def trial_seed(cfg: ExperimentConfig, pid: int, trial: int) -> np.random.SeedSequence:
    return _seed(cfg, pid, 1, trial)


def participant_policy(cfg: ExperimentConfig, pid: int) -> ActorPolicy:
    rng = np.random.default_rng(_seed(cfg, pid, 2))
    delay = float(rng.uniform(*cfg.actor_delay))
    reach = float(rng.uniform(*cfg.actor_reach_mt))
    drop = float(rng.uniform(*cfg.actor_dropoff_mt))
    return ActorPolicy(kind=ActorKind(cfg.actor), delay=delay, reach_mt=reach, dropoff_mt=drop, noise_sd=cfg.actor_noise_sd)


def _playback_files(cfg: ExperimentConfig) -> dict[tuple[str, int], list[str]]:
    root = _playback_root(cfg.playback_dir)
    lib: dict[tuple[str, int], list[str]] = {}
    for elev in cfg.elevations:
        for p in range(1, 5):
            names = []
            m = 1
            while (root / playback_name(elev, p, m)).is_file():
                names.append(playback_name(elev, p, m))
                m += 1
            if not names:
                raise ConfigError(f"no playback files for {elev} position {p} in {root}")
            lib[(elev, p)] = names
    return lib


def _playback_root(playback_dir: str) -> Path:
    if playback_dir:
        return Path(playback_dir)
    return Path(str(resources.files("handover") / "playback"))


def _mark_block(trials: list[dict]) -> list[dict]:
    trials[0]["first_in_block"] = True
    trials[-1]["last_in_block"] = True
    return trials


def _plan_participant(cfg: ExperimentConfig, pid: int) -> list[TrialPlan]:
    rng = _order_rng(cfg, pid)
    positions = range(1, 5)
    base = {"participant": pid, "coupling": cfg.coupling, "profile": cfg.profile, "elevation": cfg.elevation}
    blocks: list[list[dict]] = []

    def n_practice(b: int) -> int:
        return cfg.practice_first if b == 0 else cfg.practice_per_block

    if cfg.experiment == 1:
        *rotating, last = cfg.conditions
        orders = list(itertools.permutations(rotating))
        order = list(orders[pid % len(orders)]) + [last]
        for b, cond in enumerate(order):
            main = [dict(condition=cond, coupling=cond, position=p) for p in positions for _ in range(cfg.reps)]
            rng.shuffle(main)
            prac = [dict(condition=cond, coupling=cond, position=int(rng.integers(1, 5)), practice=True) for _ in range(n_practice(b))]
            blocks.append(prac + main)
    elif cfg.experiment == 3:
        main = [dict(condition=c, profile=c, position=p) for c in cfg.conditions for p in positions for _ in range(cfg.reps)]
        rng.shuffle(main)
        per = int(math.ceil(len(main) / cfg.blocks))
        for b in range(cfg.blocks):
            prac = []
            for _ in range(n_practice(b)):
                c = cfg.conditions[int(rng.integers(len(cfg.conditions)))]
                prac.append(dict(condition=c, profile=c, position=int(rng.integers(1, 5)), practice=True))
            blocks.append(prac + main[b * per : (b + 1) * per])
    elif cfg.experiment == 4:
        order = [cfg.conditions[i] for i in rng.permutation(len(cfg.conditions))]
        cells = [(a, e, p) for a in cfg.theta0 for e in cfg.thetaE for p in positions]
        for b, timing in enumerate(order):
            main = [dict(condition=timing, timing=timing, theta0=a, thetaE=e, position=p) for a, e, p in cells for _ in range(cfg.reps)]
            rng.shuffle(main)
            prac = []
            for _ in range(n_practice(b)):
                a, e, p = cells[int(rng.integers(len(cells)))]
                prac.append(dict(condition=timing, timing=timing, theta0=a, thetaE=e, position=p, practice=True))
            blocks.append(prac + main)
    else:
        lib = _playback_files(cfg)
        # repetitions beyond two per unique movement are drawn once and
        # shared by both partners
        fill: dict[tuple[str, int], list[str]] = {}
        for key, names in lib.items():
            seq = [n for n in names for _ in range(2)][: cfg.reps]
            while len(seq) < cfg.reps:
                seq.append(names[int(rng.integers(len(names)))])
            fill[key] = seq
        partners = list(cfg.conditions)
        shift = pid % len(partners)
        partners = partners[shift:] + partners[:shift]
        b = 0
        for partner in partners:
            for elev in [cfg.elevations[i] for i in rng.permutation(len(cfg.elevations))]:
                cond = f"{partner}/{elev}"
                main = [
                    dict(condition=cond, partner=partner, elevation=elev, position=p, playback=name, profile="Playback")
                    for p in positions
                    for name in fill[(elev, p)]
                ]
                rng.shuffle(main)
                prac = []
                for _ in range(n_practice(b)):
                    p = int(rng.integers(1, 5))
                    names = lib[(elev, p)]
                    prac.append(
                        dict(condition=cond, partner=partner, elevation=elev, position=p, practice=True,
                             playback=names[int(rng.integers(len(names)))], profile="Playback")
                    )
                blocks.append(prac + main)
                b += 1
    plans = []
    idx = 0
    for b, trials in enumerate(blocks):
        for t in _mark_block(trials):
            plans.append(TrialPlan(**{**base, **t, "trial": idx, "block": b, "practice": t.get("practice", False)}))
            idx += 1
    return plans


def plan_trials(cfg: ExperimentConfig) -> list[TrialPlan]:
    return [p for pid in range(1, cfg.participants + 1) for p in _plan_participant(cfg, pid)]


# -- execution -------------------------------------------------------------------

MANIFEST_FIELDS = (
    "participant", "trial", "block", "condition", "practice", "position", "coupling", "profile",
    "elevation", "partner", "timing", "theta0", "thetaE", "playback", "depth_jitter",
    "onset", "robot_start", "robot_arrival", "pickup", "return_start", "dropoff",
    "actor_reach_onset", "actor_dropoff_onset", "success", "timeout", "ik_fail_frames",
    "transition_violations", "raw_mt", "played_mt", "log",
)


@lru_cache(maxsize=256)
def _load_playback(path: str):
    return read_playback(path)


def trial_config(cfg: ExperimentConfig, plan: TrialPlan, rng: np.random.Generator) -> TrialConfig:
    jitter = float(rng.uniform(-cfg.jitter_range, cfg.jitter_range)) if cfg.jitter else 0.0
    rotation = None
    if plan.timing:
        rotation = RotationPlan(plan.theta0, plan.thetaE, ROTATION_WINDOWS[plan.timing])
    playback = _load_playback(str(_playback_root(cfg.playback_dir) / plan.playback)) if plan.playback else None
    return TrialConfig(
        coupling=plan.coupling,
        profile=plan.profile if plan.profile != "Playback" else ProfileKind.MIN_JERK,
        mt=cfg.mt,
        target_xy=cfg.grid[plan.position - 1],
        depth_jitter=jitter,
        rotation=rotation,
        playback=playback,
        elevation=ELEVATION_NAMES[plan.elevation],
        dwell=DWELL if cfg.dwell else None,
        orientation_criterion=cfg.orientation_criterion,
        watchdog=cfg.watchdog,
        sa_literal_offset=cfg.sa_literal_offset,
    )


def log_name(plan: TrialPlan) -> str:
    return f"logs/p{plan.participant:02d}/t{plan.trial:04d}.csv"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def execute_trial(cfg: ExperimentConfig, plan: TrialPlan, out_dir: str | Path | None = None) -> dict[str, str]:
    """Run one planned trial, write its frame log and return its manifest row."""
    rng = np.random.default_rng(trial_seed(cfg, plan.participant, plan.trial))
    tc = trial_config(cfg, plan, rng)
    entry = ProtocolState.IDLE if plan.first_in_block else ProtocolState.SAVE_TRIAL_DATA
    engine = TrialEngine(tc, participant_policy(cfg, plan.participant), rng, entry=entry, last_in_block=plan.last_in_block)
    res = engine.run()
    ev = res.events
    raw_mt = tc.playback.duration if tc.playback is not None else tc.mt
    played = ev.robot_arrival - ev.robot_start if ev.robot_arrival is not None and ev.robot_start is not None else None
    row = {f: _fmt(getattr(plan, f)) for f in ("participant", "trial", "block", "condition", "practice", "position",
                                                 "coupling", "profile", "elevation", "partner", "timing", "theta0",
                                                 "thetaE", "playback")}
    row["depth_jitter"] = repr(tc.depth_jitter)
    for f in ("onset", "robot_start", "robot_arrival", "pickup", "return_start", "dropoff",
              "actor_reach_onset", "actor_dropoff_onset", "success", "timeout"):
        row[f] = _fmt(getattr(ev, f))
    row["ik_fail_frames"] = str(res.ik_fail_frames)
    row["transition_violations"] = str(len(check_transitions(res.states)))
    row["raw_mt"] = repr(float(raw_mt))
    row["played_mt"] = _fmt(played)
    row["log"] = log_name(plan)
    if out_dir is not None:
        path = Path(out_dir) / row["log"]
        path.parent.mkdir(parents=True, exist_ok=True)
        res.write_log(path)
    return row


def _execute_star(args):
    return execute_trial(*args)


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc}") from exc


def write_manifest(path: str | Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_manifest(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_FIELDS:
            raise InputError(f"{path}:1: unexpected manifest header")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(MANIFEST_FIELDS):
                raise InputError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(rec)}")
            rows.append(dict(zip(MANIFEST_FIELDS, rec)))
    return rows


def run(cfg: ExperimentConfig, out_dir: str | Path, parallel: int = 1) -> list[dict[str, str]]:
    """Execute every planned trial; returns the manifest rows in plan order."""
    out = Path(out_dir)
    _check_writable(out)
    plans = plan_trials(cfg)
    jobs = [(cfg, p, str(out)) for p in plans]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_execute_star, jobs, chunksize=8))
    else:
        rows = [_execute_star(j) for j in jobs]
    (out / "run.cfg").write_text(cfg.to_text())
    write_manifest(out / "manifest.csv", rows)
    return rows


# -- analysis --------------------------------------------------------------------


def analyze(in_dir: str | Path, out_file: str | Path) -> tuple[list[MetricsRow], str]:
    """Metrics for every trial in a batch plus the exclusion report text.

    Writes ``out_file`` (all trials, practice flagged, exclusions in the
    ``excluded`` column) and ``<out_file>.exclusions.txt``.
    """
    src = Path(in_dir)
    if not (src / "manifest.csv").is_file() or not (src / "run.cfg").is_file():
        raise InputError(f"{src} is not a batch directory (manifest.csv and run.cfg required)")
    cfg = ExperimentConfig.from_file(src / "run.cfg")
    manifest = read_manifest(src / "manifest.csv")
    if not manifest:
        raise EmptyInputError(f"{src}/manifest.csv lists no trials")
    rows = []
    for m in manifest:
        row = MetricsRow(
            participant=int(m["participant"]),
            trial=int(m["trial"]),
            condition=m["condition"],
            block=int(m["block"]),
            practice=m["practice"] == "1",
        )
        if cfg.experiment == 2 and m["played_mt"]:
            row.tags["played_mt"] = m["played_mt"]
            row.tags["raw_mt"] = m["raw_mt"]
        try:
            log = read_frame_log(src / m["log"])
        except (OSError, ValueError) as exc:
            raise InputError(str(exc)) from exc
        rows.append(analyze_trial(TrialData.from_log(log), row))
    _, report = apply_exclusions(rows, cfg.experiment)
    for r in rows:
        if not r.practice and not r.excluded and r.participant in report.participants_excluded:
            r.excluded = "participant"
    _check_writable(Path(out_file).parent)
    write_metrics(out_file, rows)
    text = f"experiment {cfg.experiment}\nfilter: zero-phase Butterworth, order {ORDER}, {CUTOFF_HZ:g} Hz\n" + report.text()
    Path(str(out_file) + ".exclusions.txt").write_text(text)
    return rows, text


# -- statistics ------------------------------------------------------------------


@dataclass
class StatsOutcome:
    text: str
    reports: list[st.MetricReport] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)

    @property
    def degenerate(self) -> list[str]:
        return [r.metric for r in self.reports if r.degenerate]


def _usable(rows: list[MetricsRow]) -> list[MetricsRow]:
    return [r for r in rows if not r.practice and not r.excluded]


def _order(labels, experiment: int) -> list[str]:
    canon = CONDITION_ORDER.get(experiment, ())
    known = [c for c in canon if c in labels]
    return known + sorted(set(labels) - set(known))


def condition_matrix(rows: list[MetricsRow], metric: str, labels: list[str]) -> tuple[np.ndarray, list[int]]:
    """Participant x condition means; participants with a missing cell are dropped."""
    cells: dict[tuple[int, str], list[float]] = {}
    for r in rows:
        v = getattr(r, metric)
        if math.isfinite(v):
            cells.setdefault((r.participant, r.condition), []).append(v)
    pids = sorted({r.participant for r in rows})
    keep, mat = [], []
    for pid in pids:
        vals = [cells.get((pid, c)) for c in labels]
        if all(vals):
            keep.append(pid)
            mat.append([float(np.mean(v)) for v in vals])
    return np.array(mat, dtype=float).reshape(len(mat), len(labels)), keep


def _constant(m: np.ndarray) -> bool:
    return m.size == 0 or float(np.ptp(m)) <= 1e-12 * max(1.0, float(np.max(np.abs(m))))


def stats(metrics_file: str | Path, experiment: int, out_file: str | Path | None = None) -> StatsOutcome:
    try:
        rows = _usable(read_metrics(metrics_file))
    except OSError as exc:
        raise InputError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not rows:
        raise EmptyInputError(f"{metrics_file}: no analyzable trials")
    outcome = StatsOutcome("")
    sections = []
    if experiment == 2:
        partners = sorted({r.condition.split("/")[0] for r in rows}, key=lambda s: (s != "Robot", s))
        elevs = [e for e in ("E_low", "E_mid", "E_high") if any(r.condition.endswith("/" + e) for r in rows)]
        full = [f"{p}/{e}" for p in partners for e in elevs]
        factors = (("partner", "task partner", partners, 0), ("visibility", "joint visibility", elevs, 1))
        per_factor = {f[0]: [] for f in factors}
        for metric in METRIC_FIELDS:
            m, _ = condition_matrix(rows, metric, full)
            reason = _skip_reason(m, len(full))
            if reason:
                outcome.skipped[metric] = reason
                continue
            cube = m.reshape(m.shape[0], len(partners), len(elevs))
            for name, _, levels, axis in factors:
                marginal = cube.mean(axis=2 - axis)
                rep = st.analysis_pipeline(marginal, 2, levels, metric, factor=name, normality_matrix=m)
                per_factor[name].append(rep)
        for name, title, _, _ in factors:
            outcome.reports += per_factor[name]
            sections.append(st.format_report(per_factor[name], f"Main effect of {title} (experiment 2)", METRIC_NAMES))
    else:
        labels = _order({r.condition for r in rows}, experiment)
        reps = []
        for metric in METRIC_FIELDS:
            m, _ = condition_matrix(rows, metric, labels)
            reason = _skip_reason(m, len(labels))
            if reason:
                outcome.skipped[metric] = reason
                continue
            reps.append(st.analysis_pipeline(m, experiment, labels, metric))
        outcome.reports = reps
        sections.append(st.format_report(reps, f"Main effect of condition (experiment {experiment})", METRIC_NAMES))
    if outcome.skipped:
        sections.append(
            "Not tested\n" + "".join(f"{METRIC_NAMES[k]}\t{v}\n" for k, v in outcome.skipped.items())
        )
    outcome.text = "\n".join(sections)
    if out_file is not None:
        _check_writable(Path(out_file).parent)
        Path(out_file).write_text(outcome.text)
    return outcome


def _skip_reason(m: np.ndarray, k: int) -> str:
    if k < 2:
        return "fewer than 2 conditions"
    if m.shape[0] < 3:
        return f"{m.shape[0]} complete participants (need 3)"
    if _constant(m):
        return "constant across participants and conditions"
    if all(_constant(row) for row in m):
        return "no variation between conditions within any participant"
    return ""


# -- report ----------------------------------------------------------------------

SUMMARY_FIELDS = ("metric", "condition", "participants", "trials", "mean", "sd")
BOXPLOT_FIELDS = ("metric", "condition", "min", "q1", "median", "q3", "max")


def report(metrics_file: str | Path, out_dir: str | Path) -> tuple[list[dict], list[dict]]:
    """Per-condition summaries and boxplot five-number summaries of participant means."""
    try:
        rows = _usable(read_metrics(metrics_file))
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    if not rows:
        raise EmptyInputError(f"{metrics_file}: no analyzable trials")
    labels = _order({r.condition for r in rows}, 0)
    summary, box = [], []
    for metric in METRIC_FIELDS:
        for cond in labels:
            per: dict[int, list[float]] = {}
            for r in rows:
                v = getattr(r, metric)
                if r.condition == cond and math.isfinite(v):
                    per.setdefault(r.participant, []).append(v)
            if not per:
                continue
            means = np.array([np.mean(v) for _, v in sorted(per.items())])
            sd = float(np.std(means, ddof=1)) if means.size > 1 else math.nan
            summary.append(dict(metric=metric, condition=cond, participants=str(means.size),
                                trials=str(sum(len(v) for v in per.values())),
                                mean=repr(float(means.mean())), sd=_fmt(sd)))
            q = np.percentile(means, [0, 25, 50, 75, 100])
            box.append(dict(zip(BOXPLOT_FIELDS, [metric, cond] + [repr(float(x)) for x in q])))
    out = Path(out_dir)
    _check_writable(out)
    _write_table(out / "summary.csv", SUMMARY_FIELDS, summary)
    _write_table(out / "boxplot.csv", BOXPLOT_FIELDS, box)
    return summary, box


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_table(path: str | Path, header) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or tuple(got) != tuple(header):
            raise InputError(f"{path}:1: unexpected header")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append(dict(zip(header, rec)))
    return rows
