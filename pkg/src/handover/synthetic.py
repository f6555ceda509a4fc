"""Synthetic stand-ins for recorded human forward movements.

The recorded motion-capture trajectories are not available, so the shipped
playback files are generated here: a skewed minimum-jerk path (peak speed a
little before mid-movement, as in natural reaches) with a lateral bow, a
few centimetres of endpoint scatter and a small wobble of the hand's
orientation. Every file says in its header that it is synthetic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .engine import APPROACH
from .frames import quat_about_z_deg
from .trajectory import PlaybackSeries, write_playback

SAMPLE_HZ = 60.0
ELEVATIONS = ("E_low", "E_mid", "E_high")
LABEL = "SYNTHETIC STAND-IN: generated movement, not motion-capture data"


def playback_name(elevation: str, position: int, movement: int) -> str:
    return f"{elevation}_p{position}_m{movement:02d}.csv"


def synth_movement(rng: np.random.Generator, target_xy, elevation_deg: float = 0.0) -> PlaybackSeries:
    """One forward movement as displacements from its own start."""
    mt = float(rng.uniform(0.95, 1.25))
    n = int(round(mt * SAMPLE_HZ)) + 1
    t = np.linspace(0.0, mt, n)
    warp = float(rng.uniform(0.80, 0.92))
    s = (t / mt) ** warp
    s = 10 * s**3 - 15 * s**4 + 6 * s**5
    end = np.array([target_xy[0], target_xy[1], -APPROACH]) + np.clip(rng.normal(0.0, 0.015, 3), -0.05, 0.05)
    # a raised elbow sweeps the hand on a wider arc
    bow = float(rng.normal(0.0, 0.008)) + 0.01 * elevation_deg / 90.0
    pos = s[:, None] * end[None, :]
    pos[:, 0] += bow * np.sin(np.pi * s)
    pos[:, 2] += 0.5 * bow * np.sin(np.pi * s)
    wobble = float(rng.normal(0.0, 1.5)) * np.sin(np.pi * s)
    quat = np.array([quat_about_z_deg(w) for w in wobble])
    return PlaybackSeries(np.round(t, 6), np.round(pos, 6), np.round(quat, 6))


def write_library(out_dir: str | Path, grid, movements: int = 3, seed: int = 2024) -> list[Path]:
    """Write ``movements`` files per (elevation, grid position)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for elev, deg in zip(ELEVATIONS, (0.0, 45.0, 90.0)):
        for p, xy in enumerate(grid, start=1):
            for m in range(1, movements + 1):
                series = synth_movement(rng, xy, deg)
                path = out / playback_name(elev, p, m)
                write_playback(path, series, comment=f"{LABEL}\nelevation={elev} position={p} movement={m}")
                paths.append(path)
    return paths
