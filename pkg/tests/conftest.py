import numpy as np
import pytest

from klmm.genotypes import GenotypeMatrix, standardize
from klmm.simulate import SimConfig, generate_cohort


def random_standardized(n, m, seed=0):
    """Standardized genotypes of unrelated individuals with no constant columns."""
    rng = np.random.default_rng(seed)
    maf = rng.uniform(0.1, 0.5, size=m)
    while True:
        g = rng.binomial(2, maf, size=(n, m))
        if np.all(g.std(axis=0) > 0):
            return standardize(GenotypeMatrix.from_counts(g))


@pytest.fixture(scope="session")
def family_cohort():
    cfg = SimConfig(n_individuals=300, n_snps=1000, family_fraction=0.7, n_causal=20, heritability=0.5, seed=11)
    return generate_cohort(cfg)


@pytest.fixture(scope="session")
def family_std(family_cohort):
    return standardize(family_cohort.genotypes)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
