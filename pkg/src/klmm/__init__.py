"""Linear mixed model GWAS with leave-one-SNP-out kernels, a family cohort simulator and calibration tools."""

__version__ = "0.1.0"

from .calibrate import CalibrationReport, aggregate, calibrated_band, fpr_curve, ks_uniformity, make_report
from .genotypes import GenotypeMatrix, SpectralKernel, build_rrm, downdate_solve, standardize
from .lmm import AssociationResult, LmmFit, fit_variance_ratio, reml_loglik, scan_lmm, scan_univariate
from .simulate import SimConfig, SimulatedCohort, generate_cohort, generate_grid, mendelian_errors
from .tails import chi2_upper_tail, f_upper_tail

__all__ = [
    "AssociationResult",
    "CalibrationReport",
    "GenotypeMatrix",
    "LmmFit",
    "SimConfig",
    "SimulatedCohort",
    "SpectralKernel",
    "aggregate",
    "build_rrm",
    "calibrated_band",
    "chi2_upper_tail",
    "downdate_solve",
    "f_upper_tail",
    "fit_variance_ratio",
    "fpr_curve",
    "generate_cohort",
    "generate_grid",
    "mendelian_errors",
    "ks_uniformity",
    "make_report",
    "reml_loglik",
    "scan_lmm",
    "scan_univariate",
    "standardize",
]
