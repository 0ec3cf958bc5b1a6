"""Non-parametric test kernels: midranks, Mann-Whitney U, Kruskal-Wallis H,
Wilcoxon signed-rank, Shapiro-Wilk (Royston's approximation), and Bonferroni
adjustment.

All rank machinery is implemented here directly; the only outside numerics are
the standard normal distribution (stdlib erfc) and the regularized upper
incomplete gamma for chi-square tails (scipy.special.gammaincc).

Exact modes compute the full permutation distribution with integer counting,
so their p-values are bit-identical to brute-force enumeration. Two-sided
exact p-values double the smaller tail and clamp to 1. Normal approximations
apply tie-corrected variances and a 0.5 continuity correction toward the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np
from scipy.special import gammaincc

from .errors import (
    AllValuesIdenticalError,
    AllZeroDifferencesError,
    EmptySampleError,
    NonFiniteValueError,
    SampleSizeOutOfRangeError,
    ZeroVarianceError,
)

MODE_EXACT = "exact_permutation"
MODE_NORMAL = "normal_approx"
MODE_CHI2 = "chi_square_approx"
MODE_ROYSTON = "royston_approx"

_NORM = NormalDist()


def _norm_sf(z: float) -> float:
    """Upper tail of the standard normal, accurate far into the tail."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _chi2_sf(x: float, df: int) -> float:
    return float(gammaincc(df / 2.0, x / 2.0))


def significance_stars(p: float | None) -> str:
    """Stars at the 90/95/99% confidence levels."""
    if p is None:
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


@dataclass
class TestPolicy:
    """Mode selection for the rank tests.

    mode 'auto' uses exact permutation below exact_threshold (Mann-Whitney
    additionally requires tie-free data), otherwise the normal approximation.
    'exact' / 'normal' force one path.
    """

    exact_threshold: int = 20
    mode: str = "auto"  # auto | exact | normal
    continuity: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("auto", "exact", "normal"):
            raise ValueError(f"bad policy mode {self.mode!r}")


@dataclass
class TestResult:
    method: str
    statistic: float
    p_value: float
    mode: str
    n: tuple[int, ...]
    auxiliary: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value out of range: {self.p_value}")


@dataclass
class RankedSample:
    values: np.ndarray
    midranks: np.ndarray
    tie_groups: list[int]  # sizes of groups of tied values (size >= 2 only)


def midrank(values) -> RankedSample:
    """Rank values 1..n, assigning tied observations their mean rank."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptySampleError("midrank of empty sample")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("midrank requires finite values")
    order = np.argsort(arr, kind="stable")
    sorted_vals = arr[order]
    ranks = np.empty(arr.size, dtype=float)
    tie_groups: list[int] = []
    i = 0
    n = arr.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # ranks i+1 .. j+1 averaged; exact in binary (halves of integers)
        avg = (i + j + 2) / 2.0
        ranks[order[i : j + 1]] = avg
        if j > i:
            tie_groups.append(j - i + 1)
        i = j + 1
    return RankedSample(values=arr, midranks=ranks, tie_groups=tie_groups)


def _tie_term(tie_groups: list[int]) -> int:
    return sum(t * t * t - t for t in tie_groups)


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

def _mw_exact_tail_tiefree(nx: int, ny: int, u_obs: float) -> tuple[int, int]:
    """Count labelings with U <= u_obs among C(nx+ny, nx), tie-free ranks.

    Integer dynamic program over subset rank sums; exact.
    """
    n = nx + ny
    smax = n * (n + 1) // 2
    ways = [[0] * (smax + 1) for _ in range(nx + 1)]
    ways[0][0] = 1
    for r in range(1, n + 1):
        for k in range(min(nx, r), 0, -1):
            row, prev = ways[k], ways[k - 1]
            for s in range(smax, r - 1, -1):
                if prev[s - r]:
                    row[s] += prev[s - r]
    base = nx * (nx + 1) // 2
    total = math.comb(n, nx)
    tail = 0
    limit = int(math.floor(u_obs + 1e-9))
    for u in range(0, min(limit, nx * ny) + 1):
        tail += ways[nx][u + base]
    return tail, total


def _mw_exact_tail_ties(midranks: np.ndarray, nx: int, u_obs: float) -> tuple[int, int]:
    """Enumerate all group labelings over the observed midranks.

    Doubled ranks are integers, so comparisons are exact. Used only when an
    exact p-value is forced on tied data; cost is C(n, nx) subset sums.
    """
    from itertools import combinations

    r2 = np.rint(2.0 * midranks).astype(np.int64)
    n = r2.size
    base2 = nx * (nx + 1)  # doubled nx(nx+1)/2
    u_obs2 = int(round(2.0 * u_obs))
    tail = 0
    total = 0
    for idx in combinations(range(n), nx):
        u2 = int(sum(r2[i] for i in idx)) - base2
        total += 1
        if u2 <= u_obs2:
            tail += 1
    return tail, total


def mann_whitney_u(x, y, policy: TestPolicy | None = None) -> TestResult:
    """Two-sided Mann-Whitney U test on two independent samples.

    The statistic reported is U1 (based on the first sample); U1 + U2 = nx*ny
    always. Exact mode doubles P(U <= min(U1, U2)); the normal approximation
    uses tie-corrected variance and (by default) a continuity correction.
    """
    policy = policy or TestPolicy()
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.size == 0 or ya.size == 0:
        raise EmptySampleError("mann_whitney_u requires nonempty samples")
    nx, ny = int(xa.size), int(ya.size)
    n = nx + ny
    ranked = midrank(np.concatenate([xa, ya]))
    rx = float(np.sum(ranked.midranks[:nx]))
    u1 = rx - nx * (nx + 1) / 2.0
    u2 = nx * ny - u1
    tie_free = not ranked.tie_groups

    want_exact = policy.mode == "exact" or (
        policy.mode == "auto" and n <= policy.exact_threshold and tie_free
    )
    aux = {"U1": u1, "U2": u2, "rank_sum_x": rx, "ties": float(_tie_term(ranked.tie_groups))}

    if want_exact:
        if n > 24:
            raise SampleSizeOutOfRangeError(
                f"exact Mann-Whitney enumeration capped at n=24, got {n}"
            )
        u_min = min(u1, u2)
        if tie_free:
            tail, total = _mw_exact_tail_tiefree(nx, ny, u_min)
        else:
            tail, total = _mw_exact_tail_ties(ranked.midranks, nx, u_min)
        p = min(1.0, 2.0 * tail / total)
        return TestResult("mann_whitney_u", u1, p, MODE_EXACT, (nx, ny), aux)

    mu = nx * ny / 2.0
    tie_term = _tie_term(ranked.tie_groups)
    sigma2 = nx * ny / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma2 <= 0.0:
        aux["z"] = 0.0
        return TestResult("mann_whitney_u", u1, 1.0, MODE_NORMAL, (nx, ny), aux)
    d = u1 - mu
    if policy.continuity and d != 0.0:
        d -= 0.5 * math.copysign(1.0, d)
    z = d / math.sqrt(sigma2)
    aux["z"] = z
    p = min(1.0, 2.0 * _norm_sf(abs(z)))
    return TestResult("mann_whitney_u", u1, p, MODE_NORMAL, (nx, ny), aux)


# ---------------------------------------------------------------------------
# Kruskal-Wallis H
# ---------------------------------------------------------------------------

def kruskal_wallis(groups) -> TestResult:
    """Kruskal-Wallis H test over k >= 2 groups, chi-square approximation.

    H carries the usual tie correction 1 - sum(t^3 - t)/(N^3 - N); p comes
    from the chi-square distribution with k - 1 degrees of freedom.
    """
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if len(arrays) < 2:
        raise EmptySampleError("kruskal_wallis requires at least 2 groups")
    if any(a.size == 0 for a in arrays):
        raise EmptySampleError("kruskal_wallis groups must be nonempty")
    sizes = [int(a.size) for a in arrays]
    n = sum(sizes)
    if n < 3:
        raise EmptySampleError("kruskal_wallis requires total n >= 3")
    ranked = midrank(np.concatenate(arrays))
    tie_term = _tie_term(ranked.tie_groups)
    denom = n ** 3 - n
    if tie_term == denom:
        raise AllValuesIdenticalError("all observations identical")
    # centered form 12/(N(N+1)) * sum d_j^2/n_j with d_j = R_j - n_j(N+1)/2;
    # algebraically the classic formula, but exact when rank sums sit at
    # their null means (the raw form leaves ~1e-14 cancellation residue)
    h = 0.0
    off = 0
    for sz in sizes:
        rj = float(np.sum(ranked.midranks[off : off + sz]))
        d = rj - sz * (n + 1) / 2.0
        h += d * d / sz
        off += sz
    h = 12.0 / (n * (n + 1)) * h
    h /= 1.0 - tie_term / denom
    df = len(arrays) - 1
    p = min(1.0, _chi2_sf(h, df))
    aux = {"df": float(df), "ties": float(tie_term)}
    return TestResult("kruskal_wallis", h, p, MODE_CHI2, tuple(sizes), aux)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank
# ---------------------------------------------------------------------------

def _wilcoxon_exact_p(rank2: np.ndarray, w_plus2: int, w_minus2: int) -> float:
    """Exact two-sided p over all 2^n sign assignments.

    Integer generating-function product over doubled ranks; handles midranks
    exactly because doubled midranks are integers.
    """
    total_sum2 = int(rank2.sum())
    counts = [0] * (total_sum2 + 1)
    counts[0] = 1
    for r in rank2:
        r = int(r)
        for s in range(total_sum2, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    w_min2 = min(w_plus2, w_minus2)
    tail = sum(counts[: w_min2 + 1])
    return min(1.0, 2.0 * tail / (1 << rank2.size))


def wilcoxon_signed_rank(pairs, policy: TestPolicy | None = None) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Differences are second - first; zero differences are dropped (their count
    is reported in auxiliary['n_zero']). W+ is the rank sum of positive
    differences and is the reported statistic.
    """
    policy = policy or TestPolicy()
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must be an (n, 2) sequence of (first, second)")
    d = arr[:, 1] - arr[:, 0]
    if not np.all(np.isfinite(d)):
        raise NonFiniteValueError("wilcoxon_signed_rank requires finite values")
    nonzero = d != 0.0
    n_zero = int(np.sum(~nonzero))
    d = d[nonzero]
    n = int(d.size)
    if n == 0:
        raise AllZeroDifferencesError("every paired difference is zero")
    ranked = midrank(np.abs(d))
    w_plus = float(np.sum(ranked.midranks[d > 0]))
    w_minus = float(np.sum(ranked.midranks[d < 0]))
    aux = {
        "w_plus": w_plus,
        "w_minus": w_minus,
        "n_zero": float(n_zero),
        "ties": float(_tie_term(ranked.tie_groups)),
    }

    want_exact = policy.mode == "exact" or (policy.mode == "auto" and n <= policy.exact_threshold)
    if want_exact:
        if n > 30:
            raise SampleSizeOutOfRangeError(
                f"exact signed-rank distribution capped at n=30, got {n}"
            )
        rank2 = np.rint(2.0 * ranked.midranks).astype(np.int64)
        p = _wilcoxon_exact_p(rank2, int(round(2 * w_plus)), int(round(2 * w_minus)))
        return TestResult("wilcoxon_signed_rank", w_plus, p, MODE_EXACT, (n,), aux)

    mu = n * (n + 1) / 4.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(ranked.tie_groups) / 48.0
    if sigma2 <= 0.0:
        aux["z"] = 0.0
        return TestResult("wilcoxon_signed_rank", w_plus, 1.0, MODE_NORMAL, (n,), aux)
    dev = w_plus - mu
    if policy.continuity and dev != 0.0:
        dev -= 0.5 * math.copysign(1.0, dev)
    z = dev / math.sqrt(sigma2)
    aux["z"] = z
    p = min(1.0, 2.0 * _norm_sf(abs(z)))
    return TestResult("wilcoxon_signed_rank", w_plus, p, MODE_NORMAL, (n,), aux)


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston's AS R94 approximation)
# ---------------------------------------------------------------------------

# Polynomial coefficients from Royston (1995), highest power first.
_SW_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0)
_SW_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0)
_SW_C3 = (-0.0006714, 0.025054, -0.39978, 0.5440)
_SW_C4 = (-0.0020322, 0.062767, -0.77857, 1.3822)
_SW_C5 = (0.0038915, -0.083751, -0.31082, -1.5861)
_SW_C6 = (0.0030302, -0.082676, -0.4803)
_SW_G = (0.459, -2.273)


def _polyval(coeffs, x: float) -> float:
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def shapiro_wilk(x) -> TestResult:
    """Shapiro-Wilk W test of normality for 3 <= n <= 5000.

    Weights and the normalizing transform follow Royston's published
    polynomial approximations; p is the upper normal tail of the
    transformed statistic (exact arcsine form at n=3).
    """
    arr = np.asarray(x, dtype=float)
    n = int(arr.size)
    if not 3 <= n <= 5000:
        raise SampleSizeOutOfRangeError(f"shapiro_wilk requires 3 <= n <= 5000, got {n}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("shapiro_wilk requires finite values")
    xs = np.sort(arr)
    centered = xs - xs.mean()
    ssq = float(np.dot(centered, centered))
    if ssq <= 0.0 or xs[-1] == xs[0]:
        raise ZeroVarianceError("constant sample")

    # Expected normal order statistics (Blom-type plotting positions).
    probs = (np.arange(1, n + 1) - 0.375) / (n + 0.25)
    m = np.array([_NORM.inv_cdf(p) for p in probs])
    msq = float(np.dot(m, m))
    a = np.empty(n, dtype=float)
    if n == 3:
        a[0], a[1], a[2] = -math.sqrt(0.5), 0.0, math.sqrt(0.5)
    else:
        u = 1.0 / math.sqrt(n)
        c = m / math.sqrt(msq)
        a_n = c[n - 1] + _polyval(_SW_C1, u)
        if n > 5:
            a_n1 = c[n - 2] + _polyval(_SW_C2, u)
            phi = (msq - 2.0 * m[n - 1] ** 2 - 2.0 * m[n - 2] ** 2) / (
                1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
            )
            a[2 : n - 2] = m[2 : n - 2] / math.sqrt(phi)
            a[n - 2], a[1] = a_n1, -a_n1
        else:
            phi = (msq - 2.0 * m[n - 1] ** 2) / (1.0 - 2.0 * a_n**2)
            a[1 : n - 1] = m[1 : n - 1] / math.sqrt(phi)
        a[n - 1], a[0] = a_n, -a_n

    w = float(np.dot(a, centered)) ** 2 / ssq
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(1.0, max(0.0, p))
        return TestResult("shapiro_wilk", w, p, MODE_ROYSTON, (n,), {"W": w})

    one_minus_w = max(1.0 - w, 1e-300)
    y = math.log(one_minus_w)
    if n <= 11:
        gamma = _polyval(_SW_G, float(n))
        if y >= gamma:
            return TestResult("shapiro_wilk", w, 0.0, MODE_ROYSTON, (n,), {"W": w, "z": math.inf})
        y = -math.log(gamma - y)
        mu = _polyval(_SW_C3, float(n))
        sigma = math.exp(_polyval(_SW_C4, float(n)))
    else:
        lx = math.log(float(n))
        mu = _polyval(_SW_C5, lx)
        sigma = math.exp(_polyval(_SW_C6, lx))
    z = (y - mu) / sigma
    p = min(1.0, max(0.0, _norm_sf(z)))
    return TestResult("shapiro_wilk", w, p, MODE_ROYSTON, (n,), {"W": w, "z": z})


# ---------------------------------------------------------------------------
# Bonferroni
# ---------------------------------------------------------------------------

def bonferroni(p_values, m: int) -> list[float]:
    """Adjust p-values for a family of m comparisons: min(1, m*p)."""
    ps = list(p_values)
    if not ps:
        raise EmptySampleError("bonferroni requires at least one p-value")
    if m < len(ps):
        raise ValueError(f"family size m={m} smaller than number of p-values {len(ps)}")
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value out of range: {p}")
    return [min(1.0, m * p) for p in ps]


# ---------------------------------------------------------------------------
# Cut-off sensitivity sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepCell:
    group: str
    count: int
    stats: "object | None"  # metrics.DescriptiveStats; None when the group is empty


@dataclass
class SweepBlock:
    cutoff_min: float  # math.inf for the all-data row
    method: str
    statistic: float | None
    p_value: float | None
    stars: str
    mode: str
    cells: list[SweepCell]


def sensitivity_sweep(
    values_s,
    labels,
    level_order: list[str],
    cutoffs_min,
    policy: TestPolicy | None = None,
) -> list[SweepBlock]:
    """Re-run the group comparison after excluding large values.

    values_s are per-record seconds; labels the group of each record.
    For each cutoff (minutes, descending, math.inf = no cut) the values
    strictly below the cutoff are described per group and compared with
    Mann-Whitney (two declared levels) or Kruskal-Wallis (three or more).
    Empty groups become empty cells; a test needing more nonempty groups
    than available yields a block with p_value None.
    """
    from .metrics import describe

    policy = policy or TestPolicy()
    vals = np.asarray(values_s, dtype=np.int64)
    labs = np.asarray(labels)
    if vals.shape != labs.shape:
        raise ValueError("values and labels must align")
    if len(level_order) < 2:
        raise ValueError("need at least 2 declared levels")
    method = "mann_whitney_u" if len(level_order) == 2 else "kruskal_wallis"

    blocks: list[SweepBlock] = []
    for cutoff in cutoffs_min:
        if math.isinf(cutoff):
            mask = np.ones(vals.shape, dtype=bool)
        else:
            mask = vals < cutoff * 60.0
        group_vals = [vals[mask & (labs == lvl)] for lvl in level_order]
        cells = [
            SweepCell(lvl, int(g.size), describe(g) if g.size else None)
            for lvl, g in zip(level_order, group_vals)
        ]
        nonempty = [g for g in group_vals if g.size]
        statistic = p = None
        mode = ""
        if len(nonempty) >= 2:
            try:
                if method == "mann_whitney_u":
                    res = mann_whitney_u(nonempty[0], nonempty[1], policy)
                else:
                    res = kruskal_wallis(nonempty)
                statistic, p, mode = res.statistic, res.p_value, res.mode
            except AllValuesIdenticalError:
                pass
        blocks.append(
            SweepBlock(
                cutoff_min=float(cutoff),
                method=method,
                statistic=statistic,
                p_value=p,
                stars=significance_stars(p),
                mode=mode,
                cells=cells,
            )
        )
    return blocks
