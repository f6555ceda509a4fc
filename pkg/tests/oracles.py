"""Independent reference computations used by the tests.

Nothing here imports the package's numerics; each function re-derives a
value from first principles (matrix products, brute-force enumeration,
polynomial roots) so frozen constants in the tests can be re-checked.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def rot_axis_angle(axis, angle_rad):
    """Rotation matrix via the matrix exponential of the skew matrix."""
    from scipy.linalg import expm

    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return expm(K * angle_rad)


def homogeneous_chain(base, axes, offsets, joints_deg, root=np.eye(3)):
    """Tool point and rotation from 4x4 homogeneous transforms."""
    T = np.eye(4)
    T[:3, :3] = root
    T[:3, 3] = base
    for axis, off, q in zip(axes, offsets, joints_deg):
        R = np.eye(4)
        R[:3, :3] = rot_axis_angle(axis, math.radians(q))
        L = np.eye(4)
        L[:3, 3] = off
        T = T @ R @ L
    return T[:3, 3], T[:3, :3]


def two_link_jacobian(l1, l2, q1, q2):
    """Textbook planar two-link Jacobian (x, y rows) for joint angles in radians."""
    return np.array(
        [
            [-l1 * math.sin(q1) - l2 * math.sin(q1 + q2), -l2 * math.sin(q1 + q2)],
            [l1 * math.cos(q1) + l2 * math.cos(q1 + q2), l2 * math.cos(q1 + q2)],
        ]
    )


def min_jerk_threshold_tau(fraction: float) -> float:
    """Smallest tau in (0, 0.5) with 16 tau^2 (1 - tau)^2 = fraction."""
    # 16 tau^4 - 32 tau^3 + 16 tau^2 - fraction = 0
    roots = np.roots([16.0, -32.0, 16.0, 0.0, -fraction])
    real = sorted(r.real for r in roots if abs(r.imag) < 1e-12 and 0.0 < r.real < 0.5)
    return real[0]


def const_accel_half_time(MT: float) -> float:
    # 0.5 = (t / MT)^2
    return MT / math.sqrt(2.0)


def sidak_direct(p: float, k: int) -> float:
    return 1.0 - (1.0 - p) ** k


def friedman_null_n3_k3():
    """Exact null distribution of the Friedman statistic, n=3, k=3, by enumeration."""
    perms = list(itertools.permutations([1, 2, 3]))
    counts: dict[float, int] = {}
    for rows in itertools.product(perms, repeat=3):
        R = np.sum(np.array(rows, dtype=float), axis=0)
        chi2 = 12.0 / (3 * 3 * 4) * float(R @ R) - 3 * 3 * 4
        key = round(chi2, 6)
        counts[key] = counts.get(key, 0) + 1
    return counts  # 216 configurations


def wilcoxon_exact_p(d) -> float:
    """Two-sided exact signed-rank p by enumerating all sign patterns (no ties)."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    n = d.size
    ranks = np.argsort(np.argsort(np.abs(d))) + 1.0
    w_obs = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2
    stat = min(w_obs, total - w_obs)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = float(np.dot(signs, ranks))
        if min(w, total - w) <= stat + 1e-12:
            hits += 1
    return hits / 2.0**n


def mauchly_reference(m):
    """Mauchly W from eigenvalues of the covariance of successive differences, orthonormalised."""
    m = np.asarray(m, dtype=float)
    n, k = m.shape
    # any orthonormal basis of the contrast space gives the same W
    D = np.zeros((k, k - 1))
    for j in range(k - 1):
        D[j, j], D[j + 1, j] = 1.0, -1.0
    Q, _ = np.linalg.qr(D)
    S = np.cov(m, rowvar=False)
    ev = np.linalg.eigvalsh(Q.T @ S @ Q)
    p = k - 1
    W = float(np.prod(ev) / (np.mean(ev) ** p))
    eps_gg = float(np.sum(ev) ** 2 / (p * np.sum(ev**2)))
    return W, eps_gg


def rm_anova_long(m):
    """F and partial eta squared from the two-way (subject x condition) layout."""
    m = np.asarray(m, dtype=float)
    n, k = m.shape
    total = 0.0
    gm = m.mean()
    resid = m - m.mean(axis=1, keepdims=True) - m.mean(axis=0, keepdims=True) + gm
    ss_err = float(np.sum(resid**2))
    ss_cond = float(np.sum((np.repeat(m.mean(axis=0, keepdims=True), n, 0) - gm) ** 2))
    total += ss_cond
    F = (ss_cond / (k - 1)) / (ss_err / ((n - 1) * (k - 1)))
    return F, ss_cond / (ss_cond + ss_err)
