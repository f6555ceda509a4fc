"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

The lines are printed as each test finishes and again in the terminal
summary (see conftest.py).
"""

import itertools
import math
import re
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA
from handover import runner
from handover.actor import ActorKind, ActorPolicy
from handover.coupling import CouplingState, sa_offset, spatiotemporal_alignment_pos
from handover.engine import APPROACH, DT, RECEPTACLE_TOP, Z_INT, TrialConfig, check_transitions, read_frame_log, run_trial
from handover.kinematics import default_arm, ik_step, jacobian
from handover.metrics import TrialData, prepare, segment
from handover.sigproc import CUTOFF_HZ, TimeSeries, butter_lowpass, resample_90
from handover.stats import eta_from_f, kendall_w, sidak
from handover.trajectory import ProfileKind, TrajectorySpec, biphasic_eval, min_jerk_eval, time_to_fraction
from test_kinematics import fd_jacobian

PROFILES = [ProfileKind.MIN_JERK, ProfileKind.CONST_VEL, ProfileKind.CONST_ACCEL, ProfileKind.BIPHASIC]
POSITIONS = [(-0.15, 0.15), (0.15, 0.15), (-0.15, -0.15), (0.15, -0.15)]
TRACKER = ActorPolicy(ActorKind.TRACKER, noise_sd=0.0)


def record(key, ok, detail):
    CRITERIA[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def read_all(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def test_c01_boundary_suite():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    mj_end = 0.0
    for _ in range(1000):
        X0, XE = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        MT = float(rng.uniform(0.2, 3.0))
        scale = np.linalg.norm(XE - X0)
        for kind in PROFILES:
            spec = TrajectorySpec(kind, X0, XE, MT)
            a = np.max(np.abs(spec.position_velocity(0.0)[0] - X0))
            b = np.max(np.abs(spec.position_velocity(MT)[0] - XE))
            worst = max(worst, a / scale, b / scale)
        _, v, acc = min_jerk_eval(X0, XE, MT, np.array([0.0, MT]))
        mj_end = max(mj_end, float(np.max(np.abs(v))), float(np.max(np.abs(acc))))
    elapsed = time.perf_counter() - start
    record("1", worst <= 1e-9 and mj_end <= 1e-9 and elapsed < 1.0,
           f"worst boundary error {worst:.2e}*|d|, min-jerk end vel/acc {mj_end:.1e}, {elapsed:.2f} s")


def test_c02_min_jerk_peak_velocity():
    worst = 0.0
    for X0, XE, MT in [(0.0, 1.0, 1.0), (np.array([0.45, 0.28, 0.75]), np.array([0.3, 0.43, 0.4]), 1.2), (-2.0, 3.5, 0.7)]:
        _, v, _ = min_jerk_eval(X0, XE, MT, MT / 2)
        worst = max(worst, float(np.max(np.abs(v - 1.875 * (np.asarray(XE) - X0) / MT))))
    record("2", worst <= 1e-9, f"max |v(MT/2) - 1.875 d/MT| = {worst:.1e}")


def test_c03_biphasic_continuity():
    X0, XE, MT = np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.4, -0.1]), 1.3
    d = XE - X0
    jump, quarter = 0.0, 0.0
    for k, tau in enumerate((0.25, 0.5, 0.75), start=1):
        t = tau * MT
        lo, hi = biphasic_eval(X0, XE, MT, np.nextafter(t, 0)), biphasic_eval(X0, XE, MT, t)
        jump = max(jump, float(np.max(np.abs(lo[0] - hi[0]))), float(np.max(np.abs(lo[1] - hi[1]))))
        quarter = max(quarter, float(np.max(np.abs(hi[0] - (X0 + k * d / 4)))))
    record("3", jump <= 1e-9 and quarter <= 1e-9, f"max join jump {jump:.1e}, quarter-position error {quarter:.1e}")


def test_c04_half_displacement_time():
    MT = 1.2
    errs = {}
    for kind in PROFILES:
        spec = TrajectorySpec(kind, [0.45, 0.28, 0.75], [0.30, 0.43, 0.40], MT)
        # 0.7071 is 1/sqrt(2) to four places; the 1e-6 tolerance applies to the exact ratio
        ratio = 1 / math.sqrt(2) if kind is ProfileKind.CONST_ACCEL else 0.5
        errs[kind.value] = abs(time_to_fraction(spec, 0.5) - ratio * MT)
    ok = max(errs.values()) <= 1e-6 and round(1 / math.sqrt(2), 4) == 0.7071
    record("4", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " s from 0.5 MT or MT/sqrt(2)")


def test_c05_ta_synchrony():
    worst, frozen_ok, n = 0.0, True, 0
    for xy in POSITIONS:
        res = run_trial(TrialConfig(coupling="TA", target_xy=xy), TRACKER, 4)
        peg0 = res.frames[0].peg_position
        pos_int = peg0 + np.array([xy[0], xy[1], -APPROACH])
        froze = False
        for f in res.frames:
            if "returning" in f.flags:
                break
            if "started" not in f.flags:
                continue
            frac = min(max((f.tip_position[2] - RECEPTACLE_TOP[2]) / (Z_INT - RECEPTACLE_TOP[2]), 0.0), 1.0)
            peg_frac = (f.peg_position - peg0) @ (pos_int - peg0) / np.sum((pos_int - peg0) ** 2)
            if not froze:
                worst = max(worst, abs(peg_frac - frac))
                n += 1
            if "frozen" in f.flags and not froze:
                frozen_ok &= frac >= 0.97 - 1e-12
                froze = True
        frozen_ok &= froze
    record("5", worst <= 1e-9 and frozen_ok, f"{n} coupled frames, max |peg - tip fraction| {worst:.1e}, freeze at >= 0.97: {frozen_ok}")


def test_c06_sa_mirror():
    worst, n = 0.0, 0
    for xy in POSITIONS:
        res = run_trial(TrialConfig(coupling="SA", target_xy=xy), TRACKER, 5)
        peg0 = res.frames[0].peg_position
        s = CouplingState(peg0, RECEPTACLE_TOP, peg0 + np.array([xy[0], xy[1], -APPROACH]), Z_INT)
        for f in res.frames:
            if "returning" in f.flags:
                break
            if "started" not in f.flags:
                continue
            lhs = f.peg_position - peg0 + sa_offset(f.tip_position[2], s)
            worst = max(worst, float(np.max(np.abs(lhs - s.mirror * (f.tip_position - RECEPTACLE_TOP)))))
            n += 1
            if "frozen" in f.flags:
                break
    s = CouplingState(peg0, RECEPTACLE_TOP, peg0 + np.array([0.15, 0.15, -APPROACH]), Z_INT)
    at_rec = spatiotemporal_alignment_pos(RECEPTACLE_TOP.copy(), s)
    exact = np.array_equal(at_rec, peg0 - np.array([0.0, 0.04, 0.0]))
    record("6", worst <= 1e-9 and exact, f"{n} coupled frames, max identity residual {worst:.1e}, tip=rec0 exact: {exact}")


# reference rows (F, df1, df2, eta_p^2) and (chi^2, W) reported to two decimals
REFERENCE_F = [
    (89.51, 2.25, 51.65, 0.80), (29.68, 2.52, 57.85, 0.58), (26.02, 3, 69, 0.53), (25.68, 2.19, 50.39, 0.53),
    (18.86, 3, 69, 0.45), (16.71, 3, 69, 0.42), (16.49, 2.15, 49.32, 0.42), (14.94, 1.22, 28.02, 0.39),
    (11.31, 2.10, 48.19, 0.33), (7.90, 3, 69, 0.26),
    (34.46, 1, 18, 0.66), (11.45, 1, 18, 0.39), (12.24, 2, 36, 0.41), (6.89, 1.62, 29.14, 0.28),
    (1559.10, 2.53, 58.13, 0.99), (44.24, 1.91, 43.84, 0.66), (41.38, 1.85, 42.59, 0.64), (32.48, 3, 69, 0.59),
    (29.57, 2.09, 48.03, 0.56), (23.92, 2.21, 50.73, 0.51), (20.70, 2.20, 50.62, 0.47), (16.83, 2.06, 47.29, 0.42),
    (16.38, 3, 69, 0.42), (15.01, 1.45, 33.37, 0.40), (12.17, 2.02, 46.55, 0.36), (9.83, 3, 69, 0.30),
    (26.79, 3, 69, 0.54), (21.18, 2.51, 57.69, 0.48), (14.63, 3, 69, 0.39), (9.42, 3, 69, 0.29),
]
REFERENCE_CHI2 = [(36.05, 0.50), (46.85, 0.65), (42.95, 0.60), (40.60, 0.56)]


def test_c07_effect_size_identities():
    hits = [abs(eta_from_f(F, a, b) - eta) <= 0.005 for F, a, b, eta in REFERENCE_F]
    named = all(abs(eta_from_f(F, 3, 69) - eta) <= 0.005 for F, eta in ((26.02, 0.53), (16.38, 0.42), (9.83, 0.30)))
    w_hits = [abs(kendall_w(chi2, 24, 4) - w) <= 0.005 for chi2, w in REFERENCE_CHI2]
    ok = sum(hits) >= 6 and named and all(w_hits[:2])
    record("7", ok, f"eta rows {sum(hits)}/{len(hits)}, named rows {named}, Kendall W {sum(w_hits)}/{len(w_hits)}")


def test_c08_sidak_identity_and_monotonicity():
    grid_ok = True
    ps = np.linspace(0, 1, 41)
    for k in range(1, 100):
        col = [sidak(float(p), k) for p in ps]
        grid_ok &= all(a <= b for a, b in zip(col, col[1:]))
        grid_ok &= all(sidak(float(p), k) <= sidak(float(p), k + 1) for p in ps)
        grid_ok &= all(p <= c <= 1 for p, c in zip(ps, col))
    ok = sidak(0.05, 1) == 0.05 and grid_ok
    record("8a", ok, f"sidak(0.05, 1) = {sidak(0.05, 1)!r}, monotone over 41x99 grid: {grid_ok}")


@pytest.mark.xfail(strict=True, reason="1 - 0.99**66 = 0.484863, which lies 2.4e-4 from the stated 0.4851")
def test_c08_sidak_stated_value():
    got = sidak(0.01, 66)
    record("8b", abs(got - 0.4851) <= 1e-4,
           f"sidak(0.01, 66) = {got:.6f}; stated 0.4851 +/- 1e-4 is inconsistent with 1-(1-p)^k")


def test_c09_segmentation_oracle():
    worst, n = 0.0, 0
    for coupling in ("RI", "SA"):
        for i, xy in enumerate(POSITIONS):
            for reach in (0.7, 0.8, 0.9):
                pol = ActorPolicy(ActorKind.WAITER, reach_mt=reach, noise_sd=0.0)
                res = run_trial(TrialConfig(coupling=coupling, target_xy=xy), pol, 10 + i)
                td = TrialData.from_frames(res.frames)
                prep = prepare(td)
                seg = segment(td, prep)
                expected = res.events.actor_reach_onset + 0.0453 * reach
                worst = max(worst, abs(prep.t[seg.pickup_onset] - expected) / DT)
                n += 1
    record("9", worst <= 2.0, f"{n} Waiter trials, max onset error {worst:.2f} samples")


def test_c10_sigproc():
    t = np.arange(400) / 90.0
    s = TimeSeries(t, np.column_stack([np.sin(2 * t), np.cos(5 * t), t**3]))
    out = resample_90(s)
    ident = max(float(np.max(np.abs(out.t - s.t))), float(np.max(np.abs(out.values - s.values))))
    dc = float(np.max(np.abs(butter_lowpass(TimeSeries(t, np.full_like(t, 0.37))).values - 0.37)))
    tt = np.arange(2000) / 90.0
    y = butter_lowpass(TimeSeries(tt, np.sin(2 * np.pi * CUTOFF_HZ * tt))).values
    gain = float(np.sqrt(2 * np.mean(y[600:1400] ** 2)))
    ok = ident <= 1e-12 and dc <= 1e-9 and abs(gain - 1 / math.sqrt(2)) <= 0.01
    record("10", ok, f"resample identity {ident:.1e}, DC error {dc:.1e}, gain at {CUTOFF_HZ:g} Hz {gain:.4f}")


def test_c11_kinematics():
    arm = default_arm()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        q = rng.uniform(-150, 150, 6)
        worst = max(worst, float(np.max(np.abs(jacobian(arm, q) - fd_jacobian(arm, q)))))
    clamps, verbatim = 0, True
    for _ in range(200):
        q = rng.uniform(-150, 150, 6)
        j = int(rng.integers(6))
        q[j] = math.copysign(rng.uniform(158.0, 159.99), rng.uniform(-1, 1))
        dq = np.radians(rng.uniform(-1, 1, 6))
        dq[j] = math.copysign(math.radians(rng.uniform(3.0, 8.0)), q[j])
        delta = jacobian(arm, q) @ dq
        unclamped = q + np.degrees(np.linalg.pinv(jacobian(arm, q), rcond=1e-8) @ delta)
        if np.any(np.abs(unclamped) > 160.0):
            out = ik_step(arm, q, delta, 1.0)
            verbatim &= out is not q and np.array_equal(out, q)
            clamps += 1
    ok = worst <= 1e-5 and verbatim and clamps >= 100
    record("11", ok, f"max |J - J_fd| {worst:.1e} over 100 postures, clamp verbatim in {clamps} cases: {verbatim}")


@pytest.fixture(scope="module")
def exp3_batches(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp3")
    cfg = runner.load_preset("exp3.cfg", participants=1)
    start = time.perf_counter()
    rows = runner.run(cfg, root / "a")
    elapsed = time.perf_counter() - start
    runner.run(cfg, root / "b")
    return root, rows, elapsed


def test_c12_protocol_conformance(exp3_batches):
    root, rows, elapsed = exp3_batches
    main = sum(r["practice"] == "0" for r in rows)
    same = read_all(root / "a") == read_all(root / "b")
    # the engine checks its full state sequence (manifest column); the frame
    # logs only hold the states that span frames, which must still form a walk
    violations = 0
    for r in rows:
        visited = [k for k, _ in itertools.groupby(read_frame_log(root / "a" / r["log"])["state"])]
        violations += len(check_transitions(visited))
    recorded = sum(int(r["transition_violations"]) for r in rows)
    ok = main == 384 and elapsed < 60.0 and same and violations == 0 and recorded == 0
    record("12", ok, f"{main} trials + {len(rows) - main} practice in {elapsed:.1f} s, "
                     f"byte-identical: {same}, transition violations {recorded} (engine) + {violations} (logs)")


def exp1_pipeline(out):
    cfg = runner.load_preset("exp1.cfg", participants=4, reps=3, practice_first=1, practice_per_block=1)
    runner.run(cfg, out / "run")
    runner.analyze(out / "run", out / "metrics.csv")
    return runner.stats(out / "metrics.csv", 1, out / "stats.txt")


def test_c13_end_to_end(tmp_path):
    first = exp1_pipeline(tmp_path / "a")
    exp1_pipeline(tmp_path / "b")
    same = read_all(tmp_path / "a") == read_all(tmp_path / "b")
    lines = first.text.splitlines()
    start = lines.index("Variable\tSphericity Method\tStatistics")
    table = lines[start + 1 : lines.index("", start)]
    row = re.compile(r"^[^\t]+\t(SA|GG|HF|N/A)\t"
                     r"(F\([\d.]+, [\d.]+\) = [\d.]+, p = \S+, eta_p\^2 = [\d.]+"
                     r"|chi\^2\(\d+\) = [\d.]+, p = \S+, W = [\d.]+)( +\[large\])?$")
    well_formed = (
        lines[0] == "Main effect of condition (experiment 1)"
        and len(table) == len(first.reports) >= 5
        and all(row.match(ln) for ln in table)
        and not first.degenerate
    )
    record("13", same and well_formed, f"{len(first.reports)} metrics tested, {len(first.skipped)} skipped, "
                                       f"well-formed: {well_formed}, byte-identical: {same}")
