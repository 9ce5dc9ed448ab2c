"""On-disk layout for cohorts, association tables and calibration reports.

A dataset directory holds::

    genotypes.klmm      binary genotype container (see genotypes.write_genotypes)
    hidden.klmm         hidden causal SNPs, when simulated with them
    phenotype.txt       one value per line, 17 significant digits
    metadata.json       config, seed, causal indices, family labels
    assoc_<method>.csv  association tables written by ``klmm scan``
    manifest.json       run manifest
"""

from __future__ import annotations

import csv
import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .calibrate import CalibrationReport
from .errors import FormatError, MissingTruth
from .genotypes import read_genotypes, write_genotypes
from .lmm import AssociationResult
from .simulate import SimConfig, SimulatedCohort

GENOTYPE_FILE = "genotypes.klmm"
HIDDEN_FILE = "hidden.klmm"
PHENOTYPE_FILE = "phenotype.txt"
METADATA_FILE = "metadata.json"
MANIFEST_FILE = "manifest.json"
ASSOC_HEADER = ["snp_index", "beta_hat", "f_stat", "p_value", "method", "status"]
CALIBRATION_HEADER = ["alpha", "fpr_lmm", "fpr_univariate", "ci_low", "ci_high"]
CALIBRATION_TABLE = "calibration.csv"
CALIBRATION_SUMMARY = "calibration_summary.json"


def fmt(x: float) -> str:
    """Decimal text at 17 significant digits (round-trips a float64)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def assoc_path(directory: str | Path, method: str) -> Path:
    return Path(directory) / f"assoc_{method}.csv"


# ------------------------------------------------------------------ cohorts


def write_phenotype(path: str | Path, y: np.ndarray) -> None:
    with open(path, "w") as fh:
        for v in y:
            fh.write(fmt(v))
            fh.write("\n")


def read_phenotype(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        vals = [float(line) for line in fh if line.strip()]
    return np.array(vals, dtype=np.float64)


def save_cohort(cohort: SimulatedCohort, directory: str | Path) -> list[Path]:
    """Write a cohort; returns the files written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = [d / GENOTYPE_FILE, d / PHENOTYPE_FILE, d / METADATA_FILE]
    write_genotypes(d / GENOTYPE_FILE, cohort.genotypes)
    write_phenotype(d / PHENOTYPE_FILE, cohort.phenotype)
    meta = {
        "config": cohort.config.to_dict(),
        "seed": cohort.config.seed,
        "n_individuals": cohort.n_individuals,
        "n_snps": cohort.n_snps,
        "causal_indices": [int(j) for j in cohort.causal_indices],
        "family_of": None if cohort.family_of is None else [int(f) for f in cohort.family_of],
        "hidden_file": None,
        "mafs": None if cohort.mafs is None else [fmt(v) for v in cohort.mafs],
    }
    if cohort.hidden_genotypes is not None:
        write_genotypes(d / HIDDEN_FILE, cohort.hidden_genotypes)
        meta["hidden_file"] = HIDDEN_FILE
        written.insert(1, d / HIDDEN_FILE)
    dump_json(d / METADATA_FILE, meta)
    return written


def read_metadata(directory: str | Path) -> dict:
    path = Path(directory) / METADATA_FILE
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: dataset metadata not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_cohort(directory: str | Path) -> SimulatedCohort:
    d = Path(directory)
    meta = read_metadata(d)
    genotypes = read_genotypes(d / GENOTYPE_FILE)
    y = read_phenotype(d / PHENOTYPE_FILE)
    if y.shape[0] != genotypes.n_individuals:
        raise FormatError(f"{d}: phenotype has {y.shape[0]} rows, genotypes {genotypes.n_individuals}")
    hidden = read_genotypes(d / meta["hidden_file"]) if meta.get("hidden_file") else None
    cfg = SimConfig.from_dict(meta["config"]) if meta.get("config") else SimConfig()
    fam = meta.get("family_of")
    mafs = meta.get("mafs")
    return SimulatedCohort(
        genotypes=genotypes,
        phenotype=y,
        causal_indices=np.array(meta.get("causal_indices") or [], dtype=np.int64),
        config=cfg,
        family_of=None if fam is None else np.array(fam, dtype=np.int64),
        hidden_genotypes=hidden,
        mafs=None if mafs is None else np.array([float(v) for v in mafs]),
    )


def causal_truth(directory: str | Path) -> np.ndarray:
    meta = read_metadata(directory)
    if meta.get("causal_indices") is None:
        raise MissingTruth(f"{directory}: metadata has no causal_indices")
    return np.array(meta["causal_indices"], dtype=np.int64)


# ------------------------------------------------------------------ tables


def write_assoc(path: str | Path, results: Sequence[AssociationResult]) -> None:
    rows = sorted(results, key=lambda r: r.snp_index)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ASSOC_HEADER)
        for r in rows:
            w.writerow([r.snp_index, fmt(r.beta_hat), fmt(r.f_statistic), fmt(r.p_value), r.method, r.status])


def read_assoc(path: str | Path) -> list[AssociationResult]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ASSOC_HEADER:
            raise FormatError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            idx, beta, f, p, method, status = row
            out.append(AssociationResult(int(idx), float(beta), float(f), float(p), method, status))
    return out


def write_calibration(directory: str | Path, reports: dict[str, CalibrationReport], extra: dict | None = None) -> list[Path]:
    """Write the threshold table and the JSON summary for per-method reports."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ref = reports.get("lmm") or reports.get("univariate")
    alpha = ref.alpha_grid

    def col(method):
        r = reports.get(method)
        return r.fpr if r is not None else np.full(alpha.shape, np.nan)

    with open(d / CALIBRATION_TABLE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER)
        for row in zip(alpha, col("lmm"), col("univariate"), ref.ci_low, ref.ci_high):
            w.writerow([fmt(v) for v in row])

    summary = {"band_method": ref.method, "methods": {}}
    for method, r in sorted(reports.items()):
        flags = r.flags()
        lo, hi = r.band_at(0.01)
        summary["methods"][method] = {
            "n_tests": r.n_tests,
            "ks_statistic": r.ks_statistic,
            "ks_p": r.ks_p,
            "band_fraction": flags["band_fraction"],
            "band_pass": bool(flags["band_pass"]),
            "ks_pass": bool(flags["ks_pass"]),
            "calibrated": bool(r.calibrated),
            "fpr_at_0.01": r.fpr_at(0.01),
            "ci_at_0.01": [lo, hi],
            "inflated_at_0.01": bool(flags["inflated_at_0.01"]),
        }
    summary["pass"] = bool("lmm" in reports and reports["lmm"].calibrated)
    if extra:
        summary.update(extra)
    dump_json(d / CALIBRATION_SUMMARY, summary)
    return [d / CALIBRATION_TABLE, d / CALIBRATION_SUMMARY]


def read_calibration_summary(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ------------------------------------------------------------------ manifest


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def update_manifest(
    directory: str | Path,
    stage: str,
    config: dict,
    inputs: Iterable[str | Path],
    outputs: Iterable[str | Path],
    seed: int | None = None,
    status: str = "ok",
    started: str | None = None,
) -> Path:
    """Append a stage record to ``manifest.json`` in ``directory``."""
    d = Path(directory)
    path = d / MANIFEST_FILE
    if path.exists():
        with open(path) as fh:
            manifest = json.load(fh)
    else:
        manifest = {"tool": "klmm", "version": __version__, "stages": []}

    def rel(p):
        p = Path(p)
        try:
            return os.path.relpath(p, d)
        except ValueError:
            return str(p)

    manifest["version"] = __version__
    manifest["stages"] = [s for s in manifest["stages"] if s["stage"] != stage]
    manifest["stages"].append(
        {
            "stage": stage,
            "status": status,
            "config": config,
            "seed": seed,
            "inputs": sorted(rel(p) for p in inputs),
            "outputs": sorted(rel(p) for p in outputs),
            "started": started or now(),
            "finished": now(),
        }
    )
    files = set()
    for s in manifest["stages"]:
        files.update(s["inputs"])
        files.update(s["outputs"])
    manifest["files"] = sorted(files)
    dump_json(path, manifest)
    return path

