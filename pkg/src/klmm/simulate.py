"""Synthetic family-structured GWAS cohorts.

Founders carry SNPs in Hardy-Weinberg equilibrium with a per-SNP minor
allele frequency drawn uniformly from ``maf_range``; SNPs are independent
(no linkage disequilibrium). Families are formed by pairing founders from a
separate parent pool and producing ``offspring_per_pair`` children per
couple; the parents themselves are not part of the cohort. The phenotype is
a random-effects regression on standardized causal SNPs, optionally with a
second block of hidden causal SNPs that share the same pedigree.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .genotypes import GenotypeMatrix, monomorphic_columns, standardize

GRID_FAMILY_FRACTIONS = (0.5, 0.6, 0.7, 0.8, 0.9)
GRID_N_CAUSAL = (10, 50, 100, 500, 1000)
GRID_HERITABILITIES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)

MAX_REDRAWS = 100


@dataclass(frozen=True)
class SimConfig:
    n_individuals: int = 500
    n_snps: int = 2000
    family_fraction: float = 0.5
    offspring_per_pair: int = 10
    maf_range: tuple[float, float] = (0.05, 0.5)
    n_causal: int = 50
    heritability: float = 0.5
    hidden_enabled: bool = False
    n_hidden: int = 100
    hidden_strength: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "maf_range", tuple(float(v) for v in self.maf_range))

    def validate(self) -> None:
        lo, hi = self.maf_range
        if self.n_individuals < 2:
            raise ConfigError("n_individuals must be at least 2")
        if self.n_snps < 1:
            raise ConfigError("n_snps must be at least 1")
        if not 0.0 <= self.family_fraction <= 1.0:
            raise ConfigError("family_fraction must lie in [0, 1]")
        if self.offspring_per_pair < 1:
            raise ConfigError("offspring_per_pair must be at least 1")
        if not 0.0 < lo <= hi <= 0.5:
            raise ConfigError("maf_range must satisfy 0 < low <= high <= 0.5")
        if not 0 <= self.n_causal <= self.n_snps:
            raise ConfigError("n_causal must lie in [0, n_snps]")
        if not 0.0 <= self.heritability < 1.0:
            raise ConfigError("heritability must lie in [0, 1)")
        if not 0.0 <= self.hidden_strength < 1.0:
            raise ConfigError("hidden_strength must lie in [0, 1)")
        if self.hidden_enabled and self.n_hidden < 1:
            raise ConfigError("n_hidden must be positive when hidden SNPs are enabled")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n_offspring(self) -> int:
        per = self.offspring_per_pair
        return int(math.floor(self.family_fraction * self.n_individuals / per + 1e-9)) * per

    @property
    def n_families(self) -> int:
        return self.n_offspring // self.offspring_per_pair

    def variances(self) -> tuple[float, float, float]:
        """(sigma_g2, sigma_e2, sigma_h2) with the noise variance pinned to 1."""
        sigma_e2 = 1.0
        sigma_g2 = self.heritability / (1.0 - self.heritability)
        sigma_h2 = self.hidden_strength / (1.0 - self.hidden_strength) if self.hidden_enabled else 0.0
        return sigma_g2, sigma_e2, sigma_h2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["maf_range"] = list(self.maf_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SimulatedCohort:
    genotypes: GenotypeMatrix
    phenotype: np.ndarray
    causal_indices: np.ndarray
    config: SimConfig
    family_of: np.ndarray | None = None
    hidden_genotypes: GenotypeMatrix | None = None
    mafs: np.ndarray | None = field(default=None, repr=False)
    # rows are mothers then fathers, family f pairs rows f and n_families + f; not persisted
    parent_genotypes: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_individuals(self) -> int:
        return self.genotypes.n_individuals

    @property
    def n_snps(self) -> int:
        return self.genotypes.n_snps


def generate_founders(n: int, m: int, maf_range: Sequence[float], rng: np.random.Generator) -> GenotypeMatrix:
    """Unrelated individuals with one MAF per SNP, drawn uniformly."""
    genotypes, _ = _founders(n, m, maf_range, rng)
    return GenotypeMatrix(values=genotypes)


def _founders(n, m, maf_range, rng):
    if n < 1 or m < 1:
        raise ConfigError("founder generation needs n, m >= 1")
    lo, hi = maf_range
    maf = rng.uniform(lo, hi, size=m)
    g = (rng.random((n, m)) < maf).astype(np.uint8)
    g += rng.random((n, m)) < maf
    return g, maf


def _transmit(parent: np.ndarray, coins: np.ndarray) -> np.ndarray:
    # homozygotes pass their allele; heterozygotes pass the coin
    return np.where(parent == 1, coins, parent // 2).astype(np.uint8)


def mate(mother: np.ndarray, father: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One child genotype row from two parental rows."""
    mother = np.asarray(mother, dtype=np.uint8)
    father = np.asarray(father, dtype=np.uint8)
    if mother.shape != father.shape:
        raise ValueError("parents must have the same SNP count")
    from_mother = _transmit(mother, rng.random(mother.shape) < 0.5)
    from_father = _transmit(father, rng.random(father.shape) < 0.5)
    return from_mother + from_father


@dataclass(frozen=True)
class _Pedigree:
    n_families: int
    offspring_per_pair: int
    n_founders: int

    @property
    def n_parents(self) -> int:
        return 2 * self.n_families

    @property
    def n_offspring(self) -> int:
        return self.n_families * self.offspring_per_pair

    def family_labels(self) -> np.ndarray:
        fam = np.repeat(np.arange(self.n_families, dtype=np.int64), self.offspring_per_pair)
        return np.concatenate([fam, np.full(self.n_founders, -1, dtype=np.int64)])


def _pedigree_block(ped: _Pedigree, m: int, maf_range, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cohort genotypes (offspring first, then founders) for ``m`` fresh SNPs.

    Parent pool rows are ``[mothers..., fathers...]``: family ``f`` pairs
    parent ``f`` with parent ``n_families + f``.

    Returns:
        (cohort genotypes, parent genotypes, per-SNP MAF).
    """
    nf, per = ped.n_families, ped.offspring_per_pair
    pool, maf = _founders(ped.n_parents + ped.n_founders, m, maf_range, rng)
    parents = pool[: 2 * nf]
    founders = pool[2 * nf :]
    mothers = np.repeat(parents[:nf], per, axis=0)
    fathers = np.repeat(parents[nf:], per, axis=0)
    kids = _transmit(mothers, rng.random(mothers.shape) < 0.5)
    kids += _transmit(fathers, rng.random(fathers.shape) < 0.5)
    return np.concatenate([kids, founders], axis=0), parents, maf


def _pedigree_genotypes(ped: _Pedigree, m: int, maf_range, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Like ``_pedigree_block`` but redraws SNPs that come out monomorphic."""
    g, parents, maf = _pedigree_block(ped, m, maf_range, rng)
    bad = monomorphic_columns(g)
    for _ in range(MAX_REDRAWS):
        if bad.size == 0:
            return g, parents, maf
        g_new, parents_new, maf_new = _pedigree_block(ped, bad.size, maf_range, rng)
        g[:, bad] = g_new
        parents[:, bad] = parents_new
        maf[bad] = maf_new
        bad = bad[monomorphic_columns(g_new)]
    if bad.size:
        raise ConfigError(f"{bad.size} SNPs stayed monomorphic after {MAX_REDRAWS} redraws; raise N or the MAF floor")
    return g, parents, maf


def mendelian_errors(cohort: SimulatedCohort) -> int:
    """Count offspring genotypes not attainable from their recorded parents.

    Raises:
        ValueError: if the cohort carries no parent genotypes.
    """
    if cohort.parent_genotypes is None:
        raise ValueError("cohort has no parent genotypes")
    fam = cohort.family_of
    kids_mask = fam >= 0
    nf = cohort.parent_genotypes.shape[0] // 2
    kids = cohort.genotypes.values[kids_mask].astype(np.int16)
    mothers = cohort.parent_genotypes[fam[kids_mask]].astype(np.int16)
    fathers = cohort.parent_genotypes[nf + fam[kids_mask]].astype(np.int16)
    lo = (mothers == 2).astype(np.int16) + (fathers == 2)
    hi = (mothers > 0).astype(np.int16) + (fathers > 0)
    return int(np.sum((kids < lo) | (kids > hi)))


def generate_phenotype(cohort: SimulatedCohort, cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw ``y = X_c beta + W gamma + eps`` on standardized columns.

    ``beta ~ N(0, sigma_g2 / C)`` per causal SNP, ``gamma ~ N(0, sigma_h2 /
    n_hidden)`` per hidden SNP and ``eps ~ N(0, sigma_e2 I)``, so the implied
    covariance is ``sigma_e2 I + sigma_g2 X_c X_c^T / C + sigma_h2 W W^T / n_hidden``.
    """
    sigma_g2, sigma_e2, sigma_h2 = cfg.variances()
    n = cohort.n_individuals
    x = cohort.genotypes
    if not x.standardized:
        x = standardize(x)
    y = np.zeros(n)
    causal = np.asarray(cohort.causal_indices, dtype=np.int64)
    if causal.size and sigma_g2 > 0:
        beta = rng.normal(0.0, math.sqrt(sigma_g2 / causal.size), size=causal.size)
        y += x.values[:, causal] @ beta
    if cfg.hidden_enabled and cohort.hidden_genotypes is not None and sigma_h2 > 0:
        w = cohort.hidden_genotypes
        if not w.standardized:
            w = standardize(w)
        gamma = rng.normal(0.0, math.sqrt(sigma_h2 / w.n_snps), size=w.n_snps)
        y += w.values @ gamma
    y += rng.normal(0.0, math.sqrt(sigma_e2), size=n)
    return y


def generate_cohort(cfg: SimConfig) -> SimulatedCohort:
    """Simulate one cohort; identical configs give bit-identical output."""
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    rng_geno, rng_causal, rng_hidden, rng_pheno = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(4))

    ped = _Pedigree(
        n_families=cfg.n_families,
        offspring_per_pair=cfg.offspring_per_pair,
        n_founders=cfg.n_individuals - cfg.n_offspring,
    )
    raw, parents, maf = _pedigree_genotypes(ped, cfg.n_snps, cfg.maf_range, rng_geno)
    causal = np.sort(rng_causal.choice(cfg.n_snps, size=cfg.n_causal, replace=False)).astype(np.int64)
    hidden = None
    if cfg.hidden_enabled:
        w, _, _ = _pedigree_genotypes(ped, cfg.n_hidden, cfg.maf_range, rng_hidden)
        hidden = GenotypeMatrix(values=w)

    cohort = SimulatedCohort(
        genotypes=GenotypeMatrix(values=raw),
        phenotype=np.zeros(cfg.n_individuals),
        causal_indices=causal,
        config=cfg,
        family_of=ped.family_labels(),
        hidden_genotypes=hidden,
        mafs=maf,
        parent_genotypes=parents,
    )
    y = generate_phenotype(cohort, cfg, rng_pheno)
    return replace(cohort, phenotype=y)


def derive_seed(base_seed: int, coords: Sequence, replicate: int) -> int:
    """Stable 64-bit seed from the base seed, grid coordinates and replicate."""
    key = repr((int(base_seed), tuple(coords), int(replicate))).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class GridPoint:
    """One cohort descriptor of a parameter sweep."""

    family_fraction: float
    n_causal: int
    heritability: float
    replicate: int
    config: SimConfig

    @property
    def name(self) -> str:
        return f"ff{self.family_fraction:g}_c{self.n_causal}_h{self.heritability:g}_r{self.replicate}"


def generate_grid(
    base: SimConfig,
    replicates: int,
    family_fractions: Sequence[float] = GRID_FAMILY_FRACTIONS,
    n_causals: Sequence[int] = GRID_N_CAUSAL,
    heritabilities: Sequence[float] = GRID_HERITABILITIES,
) -> list[GridPoint]:
    """Cartesian sweep with a distinct derived seed per descriptor.

    Defaults are the published parameter lists.
    """
    if replicates < 1 or not family_fractions or not n_causals or not heritabilities:
        raise ConfigError("grid axes and replicate count must be nonempty")
    points = []
    for ff, c, h, r in itertools.product(family_fractions, n_causals, heritabilities, range(replicates)):
        seed = derive_seed(base.seed, (float(ff), int(c), float(h)), r)
        cfg = replace(base, family_fraction=float(ff), n_causal=int(c), heritability=float(h), seed=seed)
        cfg.validate()
        points.append(GridPoint(float(ff), int(c), float(h), r, cfg))
    return points
