"""Agreement statistics and paired significance tests."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateInput, ShapeError, UnsupportedN

EXACT_WILCOXON_MAX_N = 12


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    statistic: float
    p_value: float
    test_name: str
    n: int
    route: str | None = None


class DegenerateAgreementWarning(UserWarning):
    pass


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"paired inputs differ in shape: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateInput("inputs must be finite")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 2:
        raise DegenerateInput("pearson needs at least two pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("pearson is undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def ccc(x, y, sample: bool = False) -> float:
    """Lin's concordance correlation coefficient.

    Population (1/n) moments by default; ``sample=True`` uses 1/(n-1)
    moments instead, which some packages report.
    """
    x, y = _pair(x, y)
    n = x.size
    if n < 2:
        raise DegenerateInput("ccc needs at least two pairs")
    ddof = 1 if sample else 0
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = float(dx @ dy) / (n - ddof)
    vx = float(dx @ dx) / (n - ddof)
    vy = float(dy @ dy) / (n - ddof)
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        warnings.warn("both sequences constant and equal; ccc set to 1.0", DegenerateAgreementWarning, stacklevel=2)
        return 1.0
    return float(2.0 * cov / denom)


# -- Shapiro-Wilk (Royston 1995, AS R94) --------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coefs, x):
    out = 0.0
    for c in reversed(coefs):
        out = out * x + c
    return out


def _sw_coefficients(n: int) -> np.ndarray:
    """The n//2 antisymmetric weights for the upper order statistics."""
    half = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    i = np.arange(1, half + 1, dtype=np.float64)
    m = special.ndtri((i - 0.375) / (n + 0.25))
    summ2 = 2.0 * float(m @ m)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = np.empty(half)
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    if n > 5:
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
        a[1] = a2
        start = 2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
        start = 1
    a[0] = a1
    a[start:] = -m[start:] / fac
    return a


def shapiro_wilk(x) -> TestOutcome:
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    n = x.size
    if n < 3 or n > 5000:
        raise UnsupportedN(f"shapiro_wilk supports 3 <= n <= 5000, got {n}")
    if not np.all(np.isfinite(x)):
        raise DegenerateInput("sample must be finite")
    if x[-1] - x[0] == 0:
        raise DegenerateInput("shapiro_wilk is undefined for a constant sample")
    # rescale before the sums; W is scale invariant
    z = (x - x.mean()) / (x[-1] - x[0])
    a = _sw_coefficients(n)
    half = n // 2
    num = float(a @ (z[::-1][:half] - z[:half])) ** 2
    w = min(1.0, num / float(z @ z))

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return TestOutcome(w, min(1.0, max(0.0, p)), "shapiro", n)
    w1 = math.log1p(-w) if w < 1 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return TestOutcome(w, 1e-99, "shapiro", n)
        w1 = -math.log(gamma - w1)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    if w1 == -math.inf:
        return TestOutcome(w, 1.0, "shapiro", n)
    p = float(special.ndtr(-(w1 - mu) / sigma))
    return TestOutcome(w, p, "shapiro", n)


def _t_two_sided(t: float, df: float) -> float:
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t(x, y) -> TestOutcome:
    x, y = _pair(x, y)
    d = x - y
    n = d.size
    if n < 2:
        raise DegenerateInput("paired t-test needs n >= 2")
    sd = float(d.std(ddof=1))
    if sd == 0:
        raise DegenerateInput("paired differences have zero variance")
    t = float(d.mean()) / (sd / math.sqrt(n))
    return TestOutcome(t, _t_two_sided(t, n - 1), "paired_t", n)


def midranks(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def signed_rank_distribution(ranks):
    """Exact null distribution of W+ over all 2^m sign assignments.

    Returns ``(values, probabilities)`` for the attainable W+ values.
    """
    r2 = np.rint(2 * np.asarray(ranks, dtype=np.float64)).astype(np.int64)
    m = r2.size
    codes = np.arange(1 << m, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(m)) & 1
    sums = bits @ r2
    vals, counts = np.unique(sums, return_counts=True)
    return vals / 2.0, counts / float(1 << m)


def wilcoxon_signed_rank(x, y, method: str = "auto") -> TestOutcome:
    """Two-sided signed-rank test; zero differences dropped, ties mid-ranked.

    ``method="auto"`` enumerates sign assignments exactly for m <= 12 and
    uses the tie-corrected normal approximation (with continuity
    correction) above that.
    """
    x, y = _pair(x, y)
    d = x - y
    d = d[d != 0]
    m = d.size
    if m == 0:
        raise DegenerateInput("all paired differences are zero")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks.sum()) - w_plus
    stat = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if m <= EXACT_WILCOXON_MAX_N else "normal"
    if method == "exact":
        if m > 20:
            raise UnsupportedN("exact enumeration limited to m <= 20")
        vals, probs = signed_rank_distribution(ranks)
        lower = float(probs[vals <= w_plus + 1e-9].sum())
        upper = float(probs[vals >= w_plus - 1e-9].sum())
        p = min(1.0, 2.0 * min(lower, upper))
    elif method == "normal":
        mean = float(ranks.sum()) / 2.0
        var = float(ranks @ ranks) / 4.0
        z = max(0.0, abs(w_plus - mean) - 0.5) / math.sqrt(var)
        p = min(1.0, float(special.erfc(z / math.sqrt(2.0))))
    else:
        raise ValueError(f"unknown method {method!r}")
    return TestOutcome(stat, p, "wilcoxon_signed_rank", m)


def bonferroni(p: float, m: int) -> float:
    if m < 1:
        raise ValueError("number of comparisons must be >= 1")
    return min(1.0, m * p)


def compare_paired(x, y, alpha: float = 0.05) -> TestOutcome:
    """Normality check on the differences, then t-test or signed-rank test."""
    x, y = _pair(x, y)
    normality = shapiro_wilk(x - y)
    if normality.p_value >= alpha:
        out = paired_t(x, y)
        route = "t"
    else:
        out = wilcoxon_signed_rank(x, y)
        route = "wilcoxon"
    return TestOutcome(out.statistic, out.p_value, out.test_name, out.n, route)


def significance_stars(p: float, alpha: float = 0.05, m: int = 1) -> str:
    """'*' when p clears the Bonferroni-adjusted level alpha/m, else 'n.s.'."""
    if p is None or math.isnan(p):
        return ""
    return "*" if p < alpha / m else "n.s."
