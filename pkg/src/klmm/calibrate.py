"""P-value calibration among non-causal SNPs.

A method is calibrated when the fraction of null P values at or below a
threshold ``alpha`` equals ``alpha``. The report pools null P values across
datasets, evaluates that fraction on a grid of thresholds, draws an exact
binomial band around each ``alpha`` and runs a Kolmogorov-Smirnov test of
uniformity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .errors import EmptyInput

DEFAULT_ALPHA_GRID = np.logspace(-4.0, math.log10(0.5), 50)
BAND_FRACTION_REQUIRED = 0.9
KS_P_REQUIRED = 0.001
SEPARATION_ALPHA = 0.01
KS_EXACT_BELOW = 35


def _as_pvalues(pvals) -> np.ndarray:
    p = np.asarray(pvals, dtype=np.float64).ravel()
    if p.size == 0:
        raise EmptyInput("no P values")
    if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("P values must lie in [0, 1]")
    return p


def fpr_curve(pvals, alpha_grid=DEFAULT_ALPHA_GRID) -> np.ndarray:
    """Fraction of P values ``<= alpha`` at each threshold (inclusive)."""
    p = np.sort(_as_pvalues(pvals))
    a = np.asarray(alpha_grid, dtype=np.float64)
    return np.searchsorted(p, a, side="right") / p.size


def calibrated_band(alpha, n_tests: int, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Clopper-Pearson band for a Binomial(n_tests, alpha) proportion.

    The expected count ``n * alpha`` is generally fractional; the lower bound
    is the exact lower limit for ``ceil(n alpha)`` successes and the upper
    bound the exact upper limit for ``floor(n alpha)`` successes. When the
    expected count is an integer this is the textbook interval. Bounds are
    widened, if needed, to contain ``alpha`` itself.
    """
    if n_tests < 1:
        raise ValueError("n_tests must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    a = np.asarray(alpha, dtype=np.float64)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("alpha must lie in [0, 1]")
    tail = (1.0 - level) / 2.0
    n = n_tests
    expected = n * a
    k_lo = np.ceil(expected - 1e-9)
    k_hi = np.floor(expected + 1e-9)
    with np.errstate(invalid="ignore"):
        low = np.where(k_lo > 0, special.betaincinv(np.maximum(k_lo, 1), n - k_lo + 1, tail), 0.0)
        high = np.where(k_hi < n, special.betaincinv(k_hi + 1, np.maximum(n - k_hi, 1), 1.0 - tail), 1.0)
    low = np.minimum(low, a)
    high = np.maximum(high, a)
    if low.ndim == 0:
        return float(low), float(high)
    return low, high


def _mtw_cdf(n: int, d: float) -> float:
    """``P(D_n < d)`` by the Marsaglia-Tsang-Wang matrix method."""
    k = int(n * d) + 1
    m = 2 * k - 1
    h = k - n * d
    idx = np.arange(m)
    diff = idx[:, None] - idx[None, :] + 1
    hm = (diff >= 0).astype(np.float64)
    powers = h ** (idx + 1.0)
    hm[:, 0] -= powers
    hm[m - 1, :] -= powers[::-1]
    if 2 * h - 1 > 0:
        hm[m - 1, 0] += (2 * h - 1) ** m
    fact = special.factorial(np.maximum(diff, 0))
    hm = np.where(diff > 0, hm / fact, hm)
    # matrix power with an exponent register to avoid overflow
    q = np.eye(m)
    base = hm
    e_q, e_base = 0, 0
    p = n
    while p:
        if p & 1:
            q = q @ base
            e_q += e_base
            s = np.abs(q).max()
            if s > 1e140:
                q /= 1e140
                e_q += 140
        p >>= 1
        if p:
            base = base @ base
            e_base *= 2
            s = np.abs(base).max()
            if s > 1e140:
                base /= 1e140
                e_base += 140
    val = q[k - 1, k - 1]
    log_val = math.log(val) if val > 0 else -math.inf
    log_val += e_q * math.log(10.0) + math.lgamma(n + 1) - n * math.log(n)
    return math.exp(log_val)


def ks_pvalue(statistic: float, n: int) -> float:
    """Upper-tail probability of the one-sample KS statistic under H0."""
    d = float(statistic)
    if d <= 0.5 / n:
        return 1.0
    if d >= 1.0:
        return 0.0
    if n < KS_EXACT_BELOW:
        return float(min(1.0, max(0.0, 1.0 - _mtw_cdf(n, d))))
    return float(special.kolmogorov(math.sqrt(n) * d))


def ks_uniformity(pvals) -> tuple[float, float]:
    """One-sample KS test of P values against Uniform(0, 1).

    Exact (matrix method) below 35 values, asymptotic Kolmogorov above.
    """
    p = np.sort(_as_pvalues(pvals))
    n = p.size
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - p)
    d_minus = np.max(p - (i - 1) / n)
    d = float(max(d_plus, d_minus))
    return d, ks_pvalue(d, n)


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    method: str
    alpha_grid: np.ndarray
    fpr: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_tests: int
    ks_statistic: float
    ks_p: float
    pvalues: np.ndarray = field(repr=False)

    @property
    def in_band(self) -> np.ndarray:
        return (self.fpr >= self.ci_low) & (self.fpr <= self.ci_high)

    @property
    def band_fraction(self) -> float:
        return float(np.mean(self.in_band))

    def fpr_at(self, alpha: float) -> float:
        return float(fpr_curve(self.pvalues, [alpha])[0])

    def band_at(self, alpha: float) -> tuple[float, float]:
        return calibrated_band(alpha, self.n_tests)

    def flags(self) -> dict:
        """Pass/fail checks for a method expected to be calibrated."""
        _, hi = self.band_at(SEPARATION_ALPHA)
        return {
            "band_fraction": self.band_fraction,
            "band_pass": self.band_fraction >= BAND_FRACTION_REQUIRED,
            "ks_pass": self.ks_p > KS_P_REQUIRED,
            "inflated_at_0.01": self.fpr_at(SEPARATION_ALPHA) > hi,
        }

    @property
    def calibrated(self) -> bool:
        f = self.flags()
        return bool(f["band_pass"] and f["ks_pass"])


def make_report(pvals, method: str, alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID, level: float = 0.95) -> CalibrationReport:
    p = np.sort(_as_pvalues(pvals))
    a = np.asarray(alpha_grid, dtype=np.float64)
    if np.any(a <= 0) or np.any(a >= 1) or np.any(np.diff(a) <= 0):
        raise ValueError("alpha grid must be increasing inside (0, 1)")
    low, high = calibrated_band(a, p.size, level)
    d, ks_p = ks_uniformity(p)
    return CalibrationReport(
        method=method,
        alpha_grid=a,
        fpr=fpr_curve(p, a),
        ci_low=np.atleast_1d(low),
        ci_high=np.atleast_1d(high),
        n_tests=int(p.size),
        ks_statistic=d,
        ks_p=ks_p,
        pvalues=p,
    )


def aggregate(reports: Iterable[CalibrationReport], method: str | None = None) -> CalibrationReport:
    """Pool the P values behind several reports into one report."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("no reports to aggregate")
    method = method or reports[0].method
    pooled = np.concatenate([r.pvalues for r in reports])
    return make_report(pooled, method, reports[0].alpha_grid)


def null_pvalues(results, causal_indices) -> np.ndarray:
    """P values of successful tests on SNPs outside the causal set."""
    causal = set(int(j) for j in causal_indices)
    return np.array(
        [r.p_value for r in results if r.snp_index not in causal and r.status == "ok"],
        dtype=np.float64,
    )
