"""Linear mixed model association testing.

Model: ``y ~ N(F b, sigma_g2 (K + delta I))`` where ``K`` is the realized
relationship kernel, ``F`` the fixed-effect design (intercept, plus the test
SNP when testing) and ``delta = sigma_e2 / sigma_g2``. Everything is computed
in the kernel eigenbasis, where the covariance is diagonal, so the fixed
effects and ``sigma_g2`` profile out in closed form and only ``delta`` needs a
search.

Per-SNP testing holds ``delta`` at the value fitted once on the
intercept-only model with all SNPs in the kernel, removes the test SNP from
the kernel (rank-one Woodbury correction by default) and compares GLS
residual sums of squares with an F test.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import SingularDesign, SingularDowndate
from .genotypes import DOWNDATE_TOL, GenotypeMatrix, SpectralKernel
from .tails import chi2_upper_tail, f_upper_tail

# 10 points per decade; top end far enough out that the kernel is negligible
DEFAULT_GRID = np.logspace(-5.0, 8.0, 131)
GOLDEN_RTOL = 1e-4
P_FLOOR = 1e-300
COND_LIMIT = 1e12
# log-likelihoods this close to the maximum count as ties
TIE_RTOL = 1e-12
# RSS below this fraction of the null RSS is treated as an exact fit
PERFECT_FIT_RTOL = 1e-12
EXCLUSION_MODES = ("woodbury", "exact", "none")
CHUNK_SIZE = 256

STATUS_OK = "ok"
STATUS_SINGULAR = "singular_downdate"


@dataclass(frozen=True)
class LmmFit:
    delta: float
    sigma_g2: float
    sigma_e2: float
    fixed_effects: np.ndarray
    reml_loglik: float
    dof_residual: int

    @property
    def heritability(self) -> float:
        """``sigma_g2 / (sigma_g2 + sigma_e2)``."""
        return 1.0 / (1.0 + self.delta)


@dataclass(frozen=True)
class AssociationResult:
    snp_index: int
    beta_hat: float
    f_statistic: float
    p_value: float
    method: str
    status: str = STATUS_OK

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


class _Rotated:
    """Phenotype/design/SNP vectors projected into a kernel's eigenbasis."""

    def __init__(self, kernel: SpectralKernel, y, fixed, x=None, weight=None):
        self.s = kernel.eigenvalues
        self.n = kernel.n
        self.yr = kernel.rotate(np.asarray(y, dtype=np.float64))
        self.fr = kernel.rotate(np.asarray(fixed, dtype=np.float64).reshape(self.n, -1))
        self.xr = None if x is None else kernel.rotate(np.asarray(x, dtype=np.float64))
        self.c = kernel.scale if weight is None else float(weight)

    def gram(self, delta: float):
        """``(F'H^-1 F, F'H^-1 y, y'H^-1 y, log|H|)`` with ``H = K (- c x x') + delta I``."""
        d = self.s + delta
        fd = self.fr / d[:, None]
        g_ff = self.fr.T @ fd
        g_fy = fd.T @ self.yr
        g_yy = float(self.yr @ (self.yr / d))
        logdet = float(np.sum(np.log(d)))
        if self.xr is not None:
            xd = self.xr / d
            denom = 1.0 - self.c * float(self.xr @ xd)
            if denom <= DOWNDATE_TOL:
                raise SingularDowndate(f"leave-one-out denominator {denom:.3e}")
            u_f = self.fr.T @ xd
            u_y = float(self.yr @ xd)
            w = self.c / denom
            g_ff = g_ff + w * np.outer(u_f, u_f)
            g_fy = g_fy + w * u_f * u_y
            g_yy = g_yy + w * u_y * u_y
            logdet += math.log(denom)
        return g_ff, g_fy, g_yy, logdet


def _reml_from_gram(g_ff, g_fy, g_yy, logdet, n, delta) -> LmmFit:
    p = g_ff.shape[0]
    if np.linalg.cond(g_ff) > COND_LIMIT:
        raise SingularDesign("fixed-effect design is numerically singular")
    cf = linalg.cho_factor(g_ff)
    beta = linalg.cho_solve(cf, g_fy)
    rss = g_yy - float(g_fy @ beta)
    dof = n - p
    sigma_g2 = rss / dof
    logdet_ff = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    ll = -0.5 * (dof * math.log(2.0 * math.pi * sigma_g2) + logdet + logdet_ff + dof)
    return LmmFit(
        delta=float(delta),
        sigma_g2=float(sigma_g2),
        sigma_e2=float(delta * sigma_g2),
        fixed_effects=np.asarray(beta),
        reml_loglik=float(ll),
        dof_residual=dof,
    )


def reml_fit(
    y: np.ndarray,
    fixed: np.ndarray,
    kernel: SpectralKernel,
    delta: float,
    exclude: np.ndarray | None = None,
) -> LmmFit:
    """Closed-form REML fit of the fixed effects and ``sigma_g2`` at a given ``delta``.

    Args:
        y: phenotype, length N.
        fixed: N x p design; should contain the intercept.
        kernel: spectral kernel.
        delta: ``sigma_e2 / sigma_g2``, positive.
        exclude: standardized SNP column to remove from the kernel.

    Raises:
        SingularDesign: if ``F' H^-1 F`` has condition number above 1e12.
        SingularDowndate: if removing ``exclude`` makes the covariance singular.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    rot = _Rotated(kernel, y, fixed, exclude)
    return _reml_from_gram(*rot.gram(delta), rot.n, delta)


def reml_loglik(y, fixed, kernel, delta, exclude=None) -> float:
    """Profiled restricted log-likelihood at ``delta``."""
    return reml_fit(y, fixed, kernel, delta, exclude).reml_loglik


def _golden_max(f, lo: float, hi: float, tol: float):
    """Maximize ``f`` on ``[lo, hi]``; stops when ``hi - lo <= tol``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _fit_rotated(rot: _Rotated, grid: np.ndarray, refine: bool) -> LmmFit:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("delta grid must be nonempty, positive and strictly increasing")

    def ll(log_delta):
        delta = math.exp(log_delta)
        return _reml_from_gram(*rot.gram(delta), rot.n, delta).reml_loglik

    log_grid = np.log(grid)
    values = np.array([ll(v) for v in log_grid])
    # ties go to the smallest delta; roundoff must not break a flat profile
    top = values.max()
    i = int(np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))[0])
    delta, best_ll = float(grid[i]), values[i]
    if refine and grid.size > 1:
        lo = log_grid[max(i - 1, 0)]
        hi = log_grid[min(i + 1, grid.size - 1)]
        cand, cand_ll = _golden_max(ll, lo, hi, math.log1p(GOLDEN_RTOL))
        if cand_ll > best_ll + TIE_RTOL * max(1.0, abs(best_ll)):
            delta = min(max(math.exp(cand), float(grid[0])), float(grid[-1]))
    return _reml_from_gram(*rot.gram(delta), rot.n, delta)


def fit_variance_ratio(
    y: np.ndarray,
    kernel: SpectralKernel,
    grid: Sequence[float] | None = None,
    refine: bool = True,
    exclude: np.ndarray | None = None,
) -> LmmFit:
    """Fit ``delta`` on the intercept-only model by grid search plus golden section.

    The grid maximizer (smallest delta on ties) is refined inside its two
    neighbouring grid cells, in log-delta, to a relative width of 1e-4.
    """
    n = kernel.n
    rot = _Rotated(kernel, y, np.ones((n, 1)), exclude)
    return _fit_rotated(rot, DEFAULT_GRID if grid is None else grid, refine)


# ------------------------------------------------------------------ scans


def _f_pvalue(f_stat: np.ndarray, dof: int) -> np.ndarray:
    p = np.asarray(f_upper_tail(np.maximum(f_stat, 0.0), 1, dof))
    return np.maximum(p, P_FLOOR)


def _gls_test(g11, g1y, gyy, g1x, gxy, gxx, n):
    """Intercept-only vs intercept + SNP GLS comparison from Gram entries."""
    rss0 = gyy - g1y * g1y / g11
    sxx = gxx - g1x * g1x / g11
    sxy = gxy - g1x * g1y / g11
    beta = sxy / sxx
    explained = sxy * sxy / sxx
    rss1 = rss0 - explained
    with np.errstate(divide="ignore", invalid="ignore"):
        f_stat = np.where(rss1 > PERFECT_FIT_RTOL * rss0, explained / (rss1 / (n - 2)), np.inf)
    return beta, f_stat


def _woodbury_chunk(kernel, yr, onesr, x_chunk, delta, c):
    d = kernel.eigenvalues + delta
    xr = kernel.rotate(x_chunk)
    xd = xr / d[:, None]
    t11 = float(onesr @ (onesr / d))
    t1y = float(onesr @ (yr / d))
    tyy = float(yr @ (yr / d))
    t1x = onesr @ xd
    txy = yr @ xd
    txx = np.einsum("ij,ij->j", xr, xd)
    denom = 1.0 - c * txx
    bad = denom <= DOWNDATE_TOL
    denom = np.where(bad, 1.0, denom)
    w = c / denom
    g11 = t11 + w * t1x * t1x
    g1y = t1y + w * t1x * txy
    gyy = tyy + w * txy * txy
    g1x = t1x / denom
    gxy = txy / denom
    gxx = txx / denom
    beta, f_stat = _gls_test(g11, g1y, gyy, g1x, gxy, gxx, kernel.n)
    return beta, f_stat, bad


def _exact_chunk(x: np.ndarray, gram: np.ndarray, m: int, y, cols, delta):
    """Rebuild each leave-one-out kernel densely and Cholesky-solve."""
    n = x.shape[0]
    # keeps the full-kernel per-SNP weight 1/m: K_loo/(m-1) scaled back by (m-1)/m
    ones = np.ones(n)
    beta = np.empty(len(cols))
    f_stat = np.empty(len(cols))
    bad = np.zeros(len(cols), dtype=bool)
    for k, j in enumerate(cols):
        xj = x[:, j]
        h = (gram - np.outer(xj, xj)) / m
        h[np.diag_indices(n)] += delta
        try:
            cf = linalg.cho_factor(h, lower=True)
        except linalg.LinAlgError:
            bad[k] = True
            beta[k] = f_stat[k] = np.nan
            continue
        rhs = np.column_stack([ones, xj, y])
        sol = linalg.cho_solve(cf, rhs)
        g = rhs.T @ sol
        b, f = _gls_test(g[0, 0], g[0, 2], g[2, 2], g[0, 1], g[1, 2], g[1, 1], n)
        beta[k], f_stat[k] = b, f
    return beta, f_stat, bad


def _chunks(m: int, size: int):
    return [np.arange(a, min(a + size, m)) for a in range(0, m, size)]


def _run_chunks(fn, chunks, threads: int):
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def scan_lmm(
    genotypes: GenotypeMatrix,
    y: np.ndarray,
    kernel: SpectralKernel,
    delta: float | None = None,
    exclusion: str = "woodbury",
    refit_per_snp: bool = False,
    grid: Sequence[float] | None = None,
    threads: int = 1,
) -> list[AssociationResult]:
    """Per-SNP LMM F tests.

    Args:
        genotypes: standardized genotypes; ``kernel`` must be built from all of them.
        y: phenotype.
        kernel: all-SNP kernel.
        delta: fixed variance ratio; fitted on the intercept-only model if None.
        exclusion: how the test SNP is removed from the kernel, one of
            ``woodbury`` (rank-one correction), ``exact`` (dense rebuild) or
            ``none``.
        refit_per_snp: refit ``delta`` on each leave-one-out null model.
        grid: delta grid for fitting.
        threads: worker count; does not affect results.

    Returns:
        One result per SNP in index order. SNPs whose leave-one-out
        covariance is singular carry ``status="singular_downdate"`` and NaN
        statistics.
    """
    if not genotypes.standardized:
        raise ValueError("scan needs standardized genotypes")
    if exclusion not in EXCLUSION_MODES:
        raise ValueError(f"exclusion must be one of {EXCLUSION_MODES}")
    x = genotypes.values
    n, m = x.shape
    y = np.asarray(y, dtype=np.float64)
    if delta is None:
        delta = fit_variance_ratio(y, kernel, grid).delta
    chunks = _chunks(m, CHUNK_SIZE)

    if refit_per_snp:
        fn = lambda cols: _refit_chunk(kernel, x, y, cols, grid, exclusion)
    elif exclusion == "exact":
        gram = x @ x.T
        m_kernel = kernel.source_snp_count or m
        fn = lambda cols: _exact_chunk(x, gram, m_kernel, y, cols, delta)
    else:
        yr = kernel.rotate(y)
        onesr = kernel.rotate(np.ones(n))
        c = kernel.scale if exclusion == "woodbury" else 0.0
        fn = lambda cols: _woodbury_chunk(kernel, yr, onesr, x[:, cols], delta, c)

    parts = _run_chunks(fn, chunks, threads)
    beta = np.concatenate([p[0] for p in parts])
    f_stat = np.concatenate([p[1] for p in parts])
    bad = np.concatenate([p[2] for p in parts])
    p_val = np.full(m, np.nan)
    p_val[~bad] = _f_pvalue(f_stat[~bad], n - 2)
    results = []
    for j in range(m):
        if bad[j]:
            results.append(AssociationResult(j, math.nan, math.nan, math.nan, "lmm", STATUS_SINGULAR))
        else:
            results.append(AssociationResult(j, float(beta[j]), float(max(f_stat[j], 0.0)), float(p_val[j]), "lmm"))
    return results


def _refit_chunk(kernel, x, y, cols, grid, exclusion):
    n = x.shape[0]
    beta = np.empty(len(cols))
    f_stat = np.empty(len(cols))
    bad = np.zeros(len(cols), dtype=bool)
    weight = 0.0 if exclusion == "none" else None
    grid = DEFAULT_GRID if grid is None else grid
    for k, j in enumerate(cols):
        xj = x[:, j]
        try:
            rot = _Rotated(kernel, y, np.ones((n, 1)), xj, weight)
            fit = _fit_rotated(rot, grid, refine=True)
            b, f, flag = _woodbury_chunk(
                kernel, rot.yr, rot.fr[:, 0], xj[:, None], fit.delta, rot.c
            )
        except SingularDowndate:
            bad[k] = True
            beta[k] = f_stat[k] = np.nan
            continue
        beta[k], f_stat[k], bad[k] = b[0], f[0], flag[0]
    return beta, f_stat, bad


def scan_univariate(genotypes: GenotypeMatrix, y: np.ndarray, test: str = "lrt") -> list[AssociationResult]:
    """Per-SNP ordinary least squares of ``y`` on ``[1, x_j]``.

    ``test="lrt"`` reports the likelihood-ratio statistic
    ``N log(RSS0 / RSS1)`` with a chi2(1) P value; ``test="f"`` reports the
    F statistic with an F(1, N-2) P value.
    """
    if test not in ("lrt", "f"):
        raise ValueError("test must be 'lrt' or 'f'")
    x = np.asarray(genotypes.values, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    yc = y - y.mean()
    xc = x - x.mean(axis=0)
    rss0 = float(yc @ yc)
    sxx = np.einsum("ij,ij->j", xc, xc)
    sxy = xc.T @ yc
    beta = sxy / sxx
    rss1 = np.maximum(rss0 - sxy * sxy / sxx, 0.0)
    exact = rss1 <= PERFECT_FIT_RTOL * rss0
    with np.errstate(divide="ignore", invalid="ignore"):
        if test == "lrt":
            stat = np.where(exact, np.inf, n * np.log(rss0 / rss1))
            p = chi2_upper_tail(np.maximum(stat, 0.0), 1)
        else:
            stat = np.where(exact, np.inf, (rss0 - rss1) / (rss1 / (n - 2)))
            p = f_upper_tail(np.maximum(stat, 0.0), 1, n - 2)
    p = np.maximum(np.atleast_1d(p), P_FLOOR)
    stat = np.maximum(stat, 0.0)
    return [
        AssociationResult(j, float(beta[j]), float(stat[j]), float(p[j]), "univariate")
        for j in range(x.shape[1])
    ]
