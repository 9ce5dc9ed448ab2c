"""Genotype storage, standardization and the realized relationship kernel.

The kernel is ``K = X' X'^T / M'`` over standardized columns, where ``X'`` is
the genotype matrix with any excluded SNPs removed and ``M'`` is the number of
columns that remain. It is kept as an eigendecomposition ``K = U diag(S) U^T``
so that ``(K + delta I)^{-1}`` costs O(N^2) per right-hand side for any delta.

Leave-one-SNP-out solves use a rank-one Woodbury correction against the
full-kernel eigenbasis instead of refactorizing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmptyKernel, FormatError, MonomorphicColumn, NegativeEigenvalue, SingularDowndate

MAGIC = b"KLMM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQQ")

EIG_CLAMP_TOL = 1e-8
DOWNDATE_TOL = 1e-12
# var below this (on {0,1,2} data) only happens for constant columns
_MONO_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """N x M genotype matrix, raw allele counts or standardized.

    Raw values are stored as ``uint8``; standardized values as ``float64``
    together with the column means and standard deviations that were removed.
    """

    values: np.ndarray
    col_means: np.ndarray | None = None
    col_stds: np.ndarray | None = None
    standardized: bool = False

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("genotype values must be a 2-D array")

    @classmethod
    def from_counts(cls, counts) -> "GenotypeMatrix":
        arr = np.asarray(counts)
        if arr.ndim != 2:
            raise ValueError("genotype counts must be a 2-D array")
        if arr.size and (arr.min() < 0 or arr.max() > 2 or not np.all(arr == np.round(arr))):
            raise ValueError("allele counts must be integers in {0, 1, 2}")
        return cls(values=np.ascontiguousarray(arr, dtype=np.uint8))

    @property
    def n_individuals(self) -> int:
        return self.values.shape[0]

    @property
    def n_snps(self) -> int:
        return self.values.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def unstandardize(self) -> "GenotypeMatrix":
        """Recover the raw allele counts from a standardized matrix."""
        if not self.standardized:
            return self
        raw = np.rint(self.values * self.col_stds + self.col_means)
        return GenotypeMatrix(values=raw.astype(np.uint8))


def standardize_columns(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale every column to mean 0 and (1/N) variance 1.

    Returns:
        ``(standardized, means, stds)``.

    Raises:
        MonomorphicColumn: for the first column with zero variance.
    """
    x = np.asarray(values, dtype=np.float64)
    means = x.mean(axis=0)
    centered = x - means
    var = np.einsum("ij,ij->j", centered, centered) / x.shape[0]
    bad = np.flatnonzero(var <= _MONO_TOL)
    if bad.size:
        raise MonomorphicColumn(int(bad[0]))
    stds = np.sqrt(var)
    return centered / stds, means, stds


def monomorphic_columns(values: np.ndarray) -> np.ndarray:
    """Indices of columns whose entries are all equal."""
    v = np.asarray(values)
    return np.flatnonzero(np.all(v == v[:1], axis=0))


def standardize(g: GenotypeMatrix) -> GenotypeMatrix:
    if g.standardized:
        raise ValueError("genotype matrix is already standardized")
    x, means, stds = standardize_columns(g.values)
    return GenotypeMatrix(values=x, col_means=means, col_stds=stds, standardized=True)


@dataclass(frozen=True, eq=False)
class SpectralKernel:
    """Eigendecomposition of an N x N similarity kernel.

    Attributes:
        eigenvalues: nonincreasing, clamped at zero.
        eigenvectors: orthonormal columns, ``K = U diag(S) U^T``.
        scale: the per-column weight applied when the kernel was built (1/M').
        source_snp_count: number of SNPs that entered the kernel.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    scale: float
    source_snp_count: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_dense(cls, k: np.ndarray, scale: float = 1.0, source_snp_count: int = 0) -> "SpectralKernel":
        k = np.asarray(k, dtype=np.float64)
        s, u = np.linalg.eigh((k + k.T) / 2.0)
        if s.size and s[0] < -EIG_CLAMP_TOL * max(1.0, abs(s[-1])):
            raise NegativeEigenvalue(f"kernel has eigenvalue {s[0]:.3e}")
        s = np.clip(s, 0.0, None)[::-1].copy()
        u = np.ascontiguousarray(u[:, ::-1])
        return cls(eigenvalues=s, eigenvectors=u, scale=float(scale), source_snp_count=int(source_snp_count))

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def dense(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    def rotate(self, v: np.ndarray) -> np.ndarray:
        """Project vectors (or matrix columns) into the eigenbasis: ``U^T v``."""
        return self.eigenvectors.T @ v

    def solve(self, rhs: np.ndarray, delta: float) -> np.ndarray:
        """``(K + delta I)^{-1} rhs``."""
        d = self.eigenvalues + delta
        r = self.rotate(rhs)
        r = r / d if r.ndim == 1 else r / d[:, None]
        return self.eigenvectors @ r

    def logdet(self, delta: float) -> float:
        """``log|K + delta I|``."""
        return float(np.sum(np.log(self.eigenvalues + delta)))


def dense_rrm(g: GenotypeMatrix, exclude: Iterable[int] | None = None) -> tuple[np.ndarray, float, int]:
    """Dense ``X' X'^T / M'`` plus the scale and column count used."""
    if not g.standardized:
        raise ValueError("build the kernel from a standardized matrix")
    m = g.n_snps
    excl = sorted(set(int(j) for j in exclude)) if exclude is not None else []
    for j in excl:
        if not 0 <= j < m:
            raise IndexError(f"excluded SNP {j} out of range [0, {m})")
    m_kept = m - len(excl)
    if m_kept <= 0:
        raise EmptyKernel("all SNPs excluded from the kernel")
    x = g.values
    if excl:
        x = np.delete(x, excl, axis=1)
    scale = 1.0 / m_kept
    return (x @ x.T) * scale, scale, m_kept


def build_rrm(g: GenotypeMatrix, exclude: Iterable[int] | None = None) -> SpectralKernel:
    """Realized relationship matrix of a standardized genotype matrix.

    Args:
        g: standardized genotypes.
        exclude: SNP indices left out of the kernel.

    Raises:
        EmptyKernel: if every SNP is excluded.
    """
    k, scale, m_kept = dense_rrm(g, exclude)
    return SpectralKernel.from_dense(k, scale=scale, source_snp_count=m_kept)


def downdate_solve(
    k: SpectralKernel,
    x: np.ndarray,
    delta: float,
    rhs: np.ndarray,
    weight: float | None = None,
) -> tuple[np.ndarray, float]:
    """Solve against the kernel with one SNP's contribution removed.

    Computes ``(K - c x x^T + delta I)^{-1} rhs`` where ``c`` defaults to the
    kernel's column scale, together with the log-determinant change
    ``log(1 - c x^T (K + delta I)^{-1} x)`` relative to ``K + delta I``.

    Args:
        k: kernel that includes ``x``.
        x: the standardized SNP column being removed.
        delta: ridge ratio, must be positive.
        rhs: length-N vector or N x r matrix.
        weight: override for ``c``; 0 disables the downdate.

    Raises:
        SingularDowndate: if ``1 - c x^T A^{-1} x <= 1e-12``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    c = k.scale if weight is None else float(weight)
    d = k.eigenvalues + delta
    xr = k.rotate(x)
    br = k.rotate(rhs)
    ainv_x = xr / d
    denom = 1.0 - c * float(xr @ ainv_x)
    if denom <= DOWNDATE_TOL:
        raise SingularDowndate(f"leave-one-out denominator {denom:.3e}")
    if br.ndim == 1:
        sol_r = br / d + ainv_x * (c * float(ainv_x @ br) / denom)
    else:
        sol_r = br / d[:, None] + np.outer(ainv_x, c * (ainv_x @ br) / denom)
    return k.eigenvectors @ sol_r, float(np.log(denom))


# ---------------------------------------------------------------- file io


def write_genotypes(path: str | Path, g: GenotypeMatrix) -> None:
    """Write raw allele counts to the binary ``KLMM`` container."""
    raw = g.unstandardize().values
    n, m = raw.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, m))
        fh.write(np.ascontiguousarray(raw, dtype=np.uint8).tobytes(order="C"))


def read_genotypes(path: str | Path) -> GenotypeMatrix:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, n, m = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        body = fh.read()
    if len(body) != n * m:
        raise FormatError(f"{path}: expected {n * m} genotype bytes, found {len(body)}")
    values = np.frombuffer(body, dtype=np.uint8).reshape(n, m).copy()
    if values.size and values.max() > 2:
        raise FormatError(f"{path}: allele count above 2")
    return GenotypeMatrix(values=values)


def write_genotypes_text(path: str | Path, g: GenotypeMatrix) -> None:
    """One individual per line, space-separated allele counts."""
    raw = g.unstandardize().values
    with open(path, "w") as fh:
        for row in raw:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")


def read_genotypes_text(path: str | Path) -> GenotypeMatrix:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no genotype rows")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged genotype rows")
    arr = np.array(rows)
    if arr.min() < 0 or arr.max() > 2:
        raise FormatError(f"{path}: allele counts must be in {{0, 1, 2}}")
    return GenotypeMatrix(values=arr.astype(np.uint8))
