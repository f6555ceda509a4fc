"""Repeated-measures statistics with a normality gate.

Per metric: Shapiro-Wilk on every condition column at alpha = 0.05 / N;
more than one non-normal column sends the metric to a Friedman test,
otherwise a one-way repeated-measures ANOVA with Mauchly's sphericity test
and Greenhouse-Geisser / Huynh-Feldt corrections. Large effects
(partial eta squared >= 0.25 or Kendall's W >= 0.5) get all pairwise post
hocs, Sidak-corrected for the experiment's family size.

Test statistics are computed here; scipy only supplies distribution
functions and ranking.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

ALPHA = 0.05
LARGE_ETA = 0.25
LARGE_W = 0.5
GG_LIMIT = 0.75
EXACT_WILCOXON_MAX_N = 25

# Family sizes for the Sidak correction: large effects x comparisons.
SIDAK_K = {1: 66, 2: {"partner": 4, "visibility": 12}, 3: 90, 4: 24}
# Number of condition cells entering the normality gate.
NORMALITY_N = {1: 4, 2: 6, 3: 4, 4: 4}


class Correction(str, enum.Enum):
    NONE = "SA"
    GG = "GG"
    HF = "HF"


@dataclass(frozen=True)
class TestResult:
    kind: str  # "rm_anova", "friedman", "paired_t", "wilcoxon"
    statistic: float
    df: tuple[float, ...]
    p: float
    effect: float = math.nan
    correction: Correction = Correction.NONE
    large: bool = False
    degenerate: bool = False
    extra: dict = field(default_factory=dict)


# -- Shapiro-Wilk (Royston 1995) ----------------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(c, x: float) -> float:
    return sum(ci * x**i for i, ci in enumerate(c))


def shapiro_weights(n: int) -> np.ndarray:
    """Royston's approximation to the Shapiro-Wilk coefficients, antisymmetric, length n."""
    if n < 3:
        raise ValueError("Shapiro-Wilk needs at least 3 observations")
    half = n // 2
    if n == 3:
        a_half = np.array([math.sqrt(0.5)])
    else:
        i = np.arange(1, half + 1)
        m = sps.norm.ppf((i - 0.375) / (n + 0.25))  # lower half, negative
        summ2 = 2.0 * float(m @ m)
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) - m[0] / ssumm2
        a_half = -m / ssumm2
        if n > 5:
            a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
            a_half = -m / fac
            a_half[0], a_half[1] = a1, a2
        else:
            fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
            a_half = -m / fac
            a_half[0] = a1
    a = np.zeros(n)
    a[:half] = -a_half
    a[n - half :] = a_half[::-1]
    return a


@dataclass(frozen=True)
class ShapiroResult:
    W: float
    p: float
    degenerate: bool = False


def shapiro_wilk(sample) -> ShapiroResult:
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if not 3 <= n <= 5000:
        raise ValueError(f"Shapiro-Wilk needs 3..5000 observations, got {n}")
    ss = float(np.sum((x - x.mean()) ** 2))
    if ss <= 1e-300 * max(1.0, float(np.max(np.abs(x))) ** 2) or x[-1] == x[0]:
        return ShapiroResult(math.nan, 0.0, True)
    a = shapiro_weights(n)
    w = min(float(a @ x) ** 2 / ss, 1.0)
    if n == 3:
        p = max(6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0), 0.0)
        return ShapiroResult(w, min(p, 1.0))
    w1 = math.log1p(-w) if w < 1.0 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return ShapiroResult(w, 1e-99)
        y = -math.log(gamma - w1)
        m = _poly(_C3, n)
        s = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        y = w1
        m = _poly(_C5, ln)
        s = math.exp(_poly(_C6, ln))
    if not math.isfinite(y):
        return ShapiroResult(w, 1.0)
    return ShapiroResult(w, float(sps.norm.sf(y, loc=m, scale=s)))


# -- repeated-measures ANOVA -------------------------------------------------------


def _check_matrix(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("condition matrix must be 2-D (participants x conditions)")
    n, k = m.shape
    if n < 3 or k < 2:
        raise ValueError(f"need at least 3 participants and 2 conditions, got {n}x{k}")
    if not np.all(np.isfinite(m)):
        raise ValueError("condition matrix has missing cells")
    return m


def _contrasts(k: int) -> np.ndarray:
    """Orthonormal contrasts (k x (k-1)), columns orthogonal to the unit vector."""
    c = np.zeros((k, k - 1))
    for j in range(1, k):
        c[:j, j - 1] = 1.0
        c[j, j - 1] = -float(j)
        c[:, j - 1] /= np.linalg.norm(c[:, j - 1])
    return c


@dataclass(frozen=True)
class Sphericity:
    W: float
    chi2: float
    df: float
    p: float
    eps_gg: float
    eps_hf: float


def sphericity(matrix) -> Sphericity:
    """Mauchly's W with its chi-square approximation, plus GG and HF epsilons."""
    m = _check_matrix(matrix)
    n, k = m.shape
    if k == 2:
        return Sphericity(1.0, 0.0, 0.0, 1.0, 1.0, 1.0)
    p = k - 1
    c = _contrasts(k)
    T = c.T @ np.cov(m, rowvar=False) @ c
    tr = float(np.trace(T))
    if tr <= 0:
        return Sphericity(math.nan, math.nan, math.nan, math.nan, 1.0, 1.0)
    W = float(np.linalg.det(T)) / (tr / p) ** p
    d = 1.0 - (2 * p * p + p + 2) / (6.0 * p * (n - 1))
    df = p * (p + 1) / 2.0 - 1.0
    chi2 = -(n - 1) * d * math.log(W) if W > 0 else math.inf
    pval = float(sps.chi2.sf(chi2, df))
    eps_gg = tr**2 / (p * float(np.trace(T @ T)))
    eps_hf = (n * p * eps_gg - 2.0) / (p * (n - 1 - p * eps_gg))
    return Sphericity(W, chi2, df, pval, eps_gg, min(eps_hf, 1.0))


def rm_anova(matrix, alpha: float = ALPHA) -> TestResult:
    m = _check_matrix(matrix)
    n, k = m.shape
    gm = m.mean()
    ss_cond = n * float(np.sum((m.mean(axis=0) - gm) ** 2))
    ss_subj = k * float(np.sum((m.mean(axis=1) - gm) ** 2))
    ss_err = float(np.sum((m - gm) ** 2)) - ss_cond - ss_subj
    df1, df2 = k - 1, (n - 1) * (k - 1)
    scale = max(float(np.sum((m - gm) ** 2)), 1e-300)
    if ss_err <= 1e-12 * scale:
        return TestResult("rm_anova", math.nan, (df1, df2), math.nan, math.nan, degenerate=True)
    F = (ss_cond / df1) / (ss_err / df2)
    eta = ss_cond / (ss_cond + ss_err)
    sph = sphericity(m)
    corr, eps = Correction.NONE, 1.0
    if k > 2 and math.isfinite(sph.p) and sph.p < alpha:
        if sph.eps_gg > GG_LIMIT:
            corr, eps = Correction.HF, sph.eps_hf
        else:
            corr, eps = Correction.GG, sph.eps_gg
    d1, d2 = df1 * eps, df2 * eps
    p = float(sps.f.sf(F, d1, d2))
    return TestResult(
        "rm_anova",
        F,
        (d1, d2),
        p,
        eta,
        corr,
        eta >= LARGE_ETA,
        extra={"mauchly_W": sph.W, "mauchly_p": sph.p, "eps_gg": sph.eps_gg, "eps_hf": sph.eps_hf},
    )


def eta_from_f(F: float, df1: float, df2: float) -> float:
    return F * df1 / (F * df1 + df2)


# -- Friedman -----------------------------------------------------------------------


def friedman(matrix) -> TestResult:
    m = _check_matrix(matrix)
    n, k = m.shape
    ranks = np.apply_along_axis(sps.rankdata, 1, m)
    R = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(R @ R) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in m:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts**3 - counts))
    denom = 1.0 - ties / (n * k * (k * k - 1))
    chi2 = 0.0 if denom <= 1e-12 else max(chi2 / denom, 0.0)
    W = chi2 / (n * (k - 1))
    p = float(sps.chi2.sf(chi2, k - 1))
    return TestResult("friedman", chi2, (k - 1,), p, W, Correction.NONE, W >= LARGE_W, degenerate=denom <= 1e-12)


def kendall_w(chi2: float, n: int, k: int) -> float:
    return chi2 / (n * (k - 1))


# -- post hocs ---------------------------------------------------------------------


def paired_t(a, b) -> TestResult:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 3:
        raise ValueError("paired t-test needs two equal-length samples of at least 3")
    d = a - b
    n = d.size
    sd = float(np.std(d, ddof=1))
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    if sd <= 1e-12 * scale:
        return TestResult("paired_t", math.nan, (n - 1,), math.nan, degenerate=True)
    t = float(d.mean()) / (sd / math.sqrt(n))
    p = min(2.0 * float(sps.t.sf(abs(t), n - 1)), 1.0)
    return TestResult("paired_t", t, (n - 1,), p)


def _signed_rank_null(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of each attainable doubled W+ over all 2^n sign patterns."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> TestResult:
    """Two-sided signed-rank test; zero differences are dropped.

    Exact enumeration (tie-aware, via doubled ranks) for up to 25 non-zero
    differences, otherwise the normal approximation with continuity and tie
    corrections. The statistic is min(W+, W-).
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 5:
        raise ValueError("Wilcoxon test needs two equal-length samples of at least 5")
    d = a - b
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    d = d[np.abs(d) > 1e-12 * scale]
    n = d.size
    if n == 0:
        return TestResult("wilcoxon", math.nan, (), math.nan, degenerate=True)
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    stat = min(w_plus, total - w_plus)
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null(doubled)
        grid = np.arange(counts.size)
        lo = int(round(2 * stat))
        tail = int(sum(counts[grid <= lo]))
        p = min(1.0, 2.0 * tail / 2.0**n)
        return TestResult("wilcoxon", stat, (), p, extra={"method": "exact", "n": n})
    _, t = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(t**3 - t)) / 48.0
    z = (w_plus - total / 2.0 - 0.5 * np.sign(w_plus - total / 2.0)) / math.sqrt(var)
    p = min(1.0, 2.0 * float(sps.norm.sf(abs(z))))
    return TestResult("wilcoxon", stat, (), p, extra={"method": "normal", "n": n, "z": z})


def sidak(p: float, k: int) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if k < 1 or int(k) != k:
        raise ValueError(f"k must be a positive integer, got {k}")
    if k == 1 or p in (0.0, 1.0):
        return float(p)
    return min(max(-math.expm1(int(k) * math.log1p(-p)), 0.0), 1.0)


# -- pipeline ------------------------------------------------------------------------


@dataclass(frozen=True)
class PostHoc:
    a: str
    b: str
    test: TestResult
    p_sidak: float


@dataclass(frozen=True)
class MetricReport:
    metric: str
    labels: tuple[str, ...]
    normality: tuple[ShapiroResult, ...]
    non_normal: int
    main: TestResult
    posthocs: tuple[PostHoc, ...]
    sidak_k: int

    @property
    def degenerate(self) -> bool:
        return self.main.degenerate


def analysis_pipeline(
    matrix,
    experiment: int,
    labels=None,
    metric: str = "",
    factor: str | None = None,
    normality_matrix=None,
    sidak_k: int | None = None,
) -> MetricReport:
    """Normality gate, omnibus test, effect-size screen and post hocs for one metric.

    ``normality_matrix`` lets a factor's marginal matrix be gated on the full
    design's cells (Exp 2); by default the gate runs on ``matrix`` itself
    with alpha = 0.05 / (number of gated columns).
    """
    m = _check_matrix(matrix)
    n, k = m.shape
    labels = tuple(labels) if labels is not None else tuple(f"C{i + 1}" for i in range(k))
    gate = _check_matrix(normality_matrix) if normality_matrix is not None else m
    cutoff = ALPHA / gate.shape[1]
    sw = tuple(shapiro_wilk(gate[:, j]) for j in range(gate.shape[1]))
    bad = sum(r.degenerate or r.p < cutoff for r in sw)
    main = friedman(m) if bad > 1 else rm_anova(m)
    if sidak_k is None:
        fam = SIDAK_K[experiment]
        sidak_k = fam[factor or "partner"] if isinstance(fam, dict) else fam
    posthocs = []
    if main.large and not main.degenerate:
        col_sw = [shapiro_wilk(m[:, j]) for j in range(k)]
        col_ok = [not (r.degenerate or r.p < ALPHA / k) for r in col_sw]
        for i, j in itertools.combinations(range(k), 2):
            if col_ok[i] and col_ok[j]:
                res = paired_t(m[:, i], m[:, j])
            else:
                res = wilcoxon_signed_rank(m[:, i], m[:, j]) if n >= 5 else paired_t(m[:, i], m[:, j])
            ps = sidak(res.p, sidak_k) if math.isfinite(res.p) else math.nan
            posthocs.append(PostHoc(labels[i], labels[j], res, ps))
    return MetricReport(metric, labels, sw, bad, main, tuple(posthocs), sidak_k)


def _p(x: float) -> str:
    if not math.isfinite(x):
        return "nan"
    if 0 < x < 1e-3:
        return f"{x:.2e}"
    return f"{x:.3f}"


def _df(v: float) -> str:
    return str(int(round(v))) if abs(v - round(v)) < 1e-9 else f"{v:.2f}"


def statistics_line(res: TestResult) -> str:
    if res.degenerate:
        return "degenerate (no variance)"
    if res.kind == "friedman":
        return f"chi^2({_df(res.df[0])}) = {res.statistic:.2f}, p = {_p(res.p)}, W = {res.effect:.2f}"
    return (
        f"F({_df(res.df[0])}, {_df(res.df[1])}) = {res.statistic:.2f}, p = {_p(res.p)}, "
        f"eta_p^2 = {res.effect:.2f}"
    )


def format_report(reports: list[MetricReport], title: str, names: dict[str, str] | None = None) -> str:
    """Plain-text table: parametric rows first, each group by descending effect size."""
    names = names or {}
    para = sorted((r for r in reports if r.main.kind == "rm_anova"), key=lambda r: -_effect_key(r))
    nonpara = sorted((r for r in reports if r.main.kind == "friedman"), key=lambda r: -_effect_key(r))
    lines = [title, "", "Variable\tSphericity Method\tStatistics"]
    for r in para + nonpara:
        method = r.main.correction.value if r.main.kind == "rm_anova" else "N/A"
        flag = "  [large]" if r.main.large else ""
        lines.append(f"{names.get(r.metric, r.metric)}\t{method}\t{statistics_line(r.main)}{flag}")
    lines.append("")
    lines.append("Post hoc comparisons (large effects only; p Sidak-corrected)")
    for r in para + nonpara:
        for ph in r.posthocs:
            kind = "t" if ph.test.kind == "paired_t" else "Wilcoxon"
            if ph.test.degenerate:
                lines.append(f"{names.get(r.metric, r.metric)}\t{ph.a} vs {ph.b}\tdegenerate (no variance)")
                continue
            stat = f"{ph.test.statistic:.3f}"
            lines.append(
                f"{names.get(r.metric, r.metric)}\t{ph.a} vs {ph.b}\t{kind} = {stat}, "
                f"p = {_p(ph.test.p)}, p_s = {_p(ph.p_sidak)} (k = {r.sidak_k})"
            )
    return "\n".join(lines) + "\n"


def _effect_key(r: MetricReport) -> float:
    return r.main.effect if math.isfinite(r.main.effect) else -1.0
