"""Analysis preprocessing: 90 Hz resampling, Butterworth low-pass, gradient velocity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import butter, sosfilt, sosfilt_zi

RATE_HZ = 90.0
CUTOFF_HZ = 10.0
ORDER = 4


@dataclass(frozen=True)
class TimeSeries:
    t: np.ndarray  # (n,)
    values: np.ndarray  # (n,) or (n, d)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != t.size:
            raise ValueError(f"{t.size} timestamps but {v.shape[0]} samples")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("series contains non-finite samples")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.t.size


def _uniform_dt(series: TimeSeries, rate: float | None = None) -> float:
    if len(series) < 2:
        raise ValueError("need at least 2 samples")
    d = np.diff(series.t)
    dt = float(d.mean())
    if np.max(np.abs(d - dt)) > 1e-9 * max(1.0, abs(series.t[-1])):
        raise ValueError("series is not uniformly sampled")
    if rate is not None and abs(dt * rate - 1.0) > 1e-6:
        raise ValueError(f"series is sampled at {1 / dt:.6g} Hz, expected {rate:g} Hz")
    return dt


def resample_90(series: TimeSeries, rate: float = RATE_HZ) -> TimeSeries:
    """Natural cubic spline through every sample, read off a uniform grid.

    The grid starts at the first timestamp and steps 1/rate up to the last.
    """
    if len(series) < 4:
        raise ValueError(f"resampling needs at least 4 samples, got {len(series)}")
    t0, t1 = series.t[0], series.t[-1]
    n = int(math.floor((t1 - t0) * rate + 1e-9)) + 1
    grid = t0 + np.arange(n) / rate
    grid[-1] = min(grid[-1], t1)
    spline = CubicSpline(series.t, series.values, bc_type="natural")
    return TimeSeries(grid, spline(grid))


def _design(order: int, cutoff: float, fs: float, zero_phase: bool):
    if zero_phase:
        # Two passes of an order/2 filter give the requested order with a
        # squared magnitude; shift the per-pass cutoff so the combined
        # response still crosses 1/sqrt(2) at ``cutoff``.
        if order % 2:
            raise ValueError("zero-phase filtering needs an even order")
        half = order // 2
        w = math.tan(math.pi * cutoff / fs)
        w_pass = w / (math.sqrt(2.0) - 1.0) ** (1.0 / (2 * half))
        return butter(half, 2.0 * math.atan(w_pass) / math.pi, output="sos"), True
    return butter(order, cutoff, fs=fs, output="sos"), False


def _primed(sos, x: np.ndarray) -> np.ndarray:
    # state at the steady state of a step to the first sample
    zi = sosfilt_zi(sos)
    zi = zi.reshape(zi.shape + (1,) * (x.ndim - 1)) * x[0]
    y, _ = sosfilt(sos, x, axis=0, zi=zi)
    return y


def butter_lowpass(
    series: TimeSeries,
    order: int = ORDER,
    cutoff: float = CUTOFF_HZ,
    rate: float = RATE_HZ,
    zero_phase: bool = True,
) -> TimeSeries:
    """Butterworth low-pass of a uniform series, column-wise.

    ``zero_phase=True`` (the default) runs a forward and a backward pass so
    event times are not shifted by the filter's group delay; ``False`` gives
    the single-pass causal filter of the full order. Both have unit DC gain
    and -3 dB at ``cutoff``.
    """
    _uniform_dt(series, rate)
    if not 0 < cutoff < rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz outside (0, {rate / 2}) Hz")
    sos, two_pass = _design(order, cutoff, rate, zero_phase)
    x = series.values
    y = _primed(sos, x)
    if two_pass:
        y = _primed(sos, y[::-1])[::-1]
    return TimeSeries(series.t.copy(), np.ascontiguousarray(y))


def gradient_velocity(series: TimeSeries) -> TimeSeries:
    """Central differences inside, one-sided at the ends."""
    dt = _uniform_dt(series)
    return TimeSeries(series.t.copy(), np.gradient(series.values, dt, axis=0))
