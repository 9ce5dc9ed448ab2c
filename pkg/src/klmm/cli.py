"""Command-line interface: ``klmm simulate | scan | calibrate | report``.

Configuration for ``simulate`` comes from a JSON file whose keys are the
``SimConfig`` fields plus an optional ``grid`` block::

    {
      "n_individuals": 500, "n_snps": 2000, "n_causal": 50,
      "heritability": 0.4, "family_fraction": 0.7, "seed": 7,
      "grid": {"family_fractions": [0.5, 0.7, 0.9], "n_causals": [50],
               "heritabilities": [0.2, 0.4, 0.6], "replicates": 1}
    }

Command-line flags override the file, which overrides the defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, storage
from .calibrate import DEFAULT_ALPHA_GRID, make_report, null_pvalues
from .errors import KlmmError
from .genotypes import build_rrm, standardize
from .lmm import DEFAULT_GRID, EXCLUSION_MODES, fit_variance_ratio, scan_lmm, scan_univariate
from .simulate import (
    GRID_FAMILY_FRACTIONS,
    GRID_HERITABILITIES,
    GRID_N_CAUSAL,
    SimConfig,
    generate_cohort,
    generate_grid,
)

log = logging.getLogger("klmm")

EXIT_OK = 0
EXIT_CALIBRATION_FAILED = 1
EXIT_ERROR = 2

_SIM_FLAGS = {
    "n_individuals": "n_individuals",
    "n_snps": "n_snps",
    "family_fraction": "family_fraction",
    "offspring_per_pair": "offspring_per_pair",
    "n_causal": "n_causal",
    "heritability": "heritability",
    "n_hidden": "n_hidden",
    "hidden_strength": "hidden_strength",
    "seed": "seed",
}


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _sim_settings(args) -> tuple[SimConfig, dict | None]:
    raw = _load_json(args.config)
    grid = raw.pop("grid", None)
    cfg = SimConfig.from_dict(raw)
    overrides = {k: getattr(args, flag) for flag, k in _SIM_FLAGS.items() if getattr(args, flag) is not None}
    if args.maf_range is not None:
        overrides["maf_range"] = tuple(args.maf_range)
    if args.hidden:
        overrides["hidden_enabled"] = True
    cfg = replace(cfg, **overrides)
    if args.grid or grid is not None:
        grid = dict(grid or {})
        grid.setdefault("family_fractions", list(GRID_FAMILY_FRACTIONS))
        grid.setdefault("n_causals", list(GRID_N_CAUSAL))
        grid.setdefault("heritabilities", list(GRID_HERITABILITIES))
        grid.setdefault("replicates", 3)
        if args.replicates is not None:
            grid["replicates"] = args.replicates
    cfg.validate()
    return cfg, grid


def cmd_simulate(args) -> int:
    cfg, grid = _sim_settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.config] if args.config else []
    if grid is None:
        started = storage.now()
        written = storage.save_cohort(generate_cohort(cfg), out)
        storage.update_manifest(out, "simulate", cfg.to_dict(), inputs, written, seed=cfg.seed, started=started)
        log.info("wrote cohort to %s", out)
        return EXIT_OK

    points = generate_grid(
        cfg,
        grid["replicates"],
        grid["family_fractions"],
        grid["n_causals"],
        grid["heritabilities"],
    )
    index = []
    for pt in points:
        d = out / pt.name
        started = storage.now()
        written = storage.save_cohort(generate_cohort(pt.config), d)
        storage.update_manifest(d, "simulate", pt.config.to_dict(), inputs, written, seed=pt.config.seed, started=started)
        index.append({"name": pt.name, "seed": pt.config.seed})
    storage.dump_json(out / "grid.json", {"base": cfg.to_dict(), "grid": grid, "datasets": index})
    storage.update_manifest(
        out, "simulate-grid", {"base": cfg.to_dict(), "grid": grid}, inputs,
        [out / "grid.json"] + [out / p.name for p in points], seed=cfg.seed,
    )
    log.info("wrote %d cohorts under %s", len(points), out)
    return EXIT_OK


def _delta_grid(points: int | None) -> np.ndarray:
    if points is None:
        return DEFAULT_GRID
    lo, hi = np.log10(DEFAULT_GRID[0]), np.log10(DEFAULT_GRID[-1])
    return np.logspace(lo, hi, points)


def run_scan(
    dataset: str | Path,
    method: str = "both",
    exclusion: str = "woodbury",
    refit_per_snp: bool = False,
    grid_points: int | None = None,
    threads: int = 1,
    test: str = "lrt",
    out: str | Path | None = None,
) -> dict[str, Path]:
    """Scan one dataset directory and write its association tables."""
    d = Path(dataset)
    out_dir = Path(out) if out else d
    out_dir.mkdir(parents=True, exist_ok=True)
    started = storage.now()
    cohort = storage.load_cohort(d)
    g = standardize(cohort.genotypes)
    y = cohort.phenotype
    written: dict[str, Path] = {}
    info: dict = {"method": method, "exclusion": exclusion, "refit_per_snp": refit_per_snp, "univariate_test": test}
    if method in ("lmm", "both"):
        kernel = build_rrm(g)
        grid = _delta_grid(grid_points)
        fit = fit_variance_ratio(y, kernel, grid)
        results = scan_lmm(
            g, y, kernel, delta=fit.delta, exclusion=exclusion, refit_per_snp=refit_per_snp, grid=grid, threads=threads
        )
        path = storage.assoc_path(out_dir, "lmm")
        storage.write_assoc(path, results)
        written["lmm"] = path
        info["fit"] = {
            "delta": storage.fmt(fit.delta),
            "sigma_g2": storage.fmt(fit.sigma_g2),
            "sigma_e2": storage.fmt(fit.sigma_e2),
            "heritability": storage.fmt(fit.heritability),
            "reml_loglik": storage.fmt(fit.reml_loglik),
        }
    if method in ("univariate", "both"):
        path = storage.assoc_path(out_dir, "univariate")
        storage.write_assoc(path, scan_univariate(g, y, test=test))
        written["univariate"] = path
    inputs = [d / storage.GENOTYPE_FILE, d / storage.PHENOTYPE_FILE, d / storage.METADATA_FILE]
    storage.update_manifest(out_dir, "scan", info, inputs, list(written.values()), started=started)
    return written


def cmd_scan(args) -> int:
    for dataset in args.datasets:
        run_scan(
            dataset,
            method=args.method,
            exclusion=args.exclusion,
            refit_per_snp=args.refit_per_snp,
            grid_points=args.grid_points,
            threads=args.threads,
            test=args.test,
            out=args.out if len(args.datasets) == 1 else None,
        )
        log.info("scanned %s", dataset)
    return EXIT_OK


def run_calibrate(result_dirs, out: str | Path, alpha_grid=DEFAULT_ALPHA_GRID):
    """Pool non-causal P values over result directories and write the report."""
    started = storage.now()
    pooled: dict[str, list[np.ndarray]] = {}
    inputs = []
    for d in map(Path, result_dirs):
        causal = storage.causal_truth(d)
        inputs.append(d / storage.METADATA_FILE)
        for method in ("lmm", "univariate"):
            path = storage.assoc_path(d, method)
            if path.exists():
                pooled.setdefault(method, []).append(null_pvalues(storage.read_assoc(path), causal))
                inputs.append(path)
    if not pooled:
        raise KlmmError("no association tables found in the given directories")
    reports = {m: make_report(np.concatenate(v), m, alpha_grid) for m, v in pooled.items()}
    written = storage.write_calibration(out, reports, {"n_datasets": len(result_dirs)})
    storage.update_manifest(out, "calibrate", {"n_datasets": len(result_dirs)}, inputs, written, started=started)
    return reports


def cmd_calibrate(args) -> int:
    reports = run_calibrate(args.results, args.out)
    for method, r in sorted(reports.items()):
        f = r.flags()
        log.info(
            "%s: n_tests=%d band_fraction=%.3f ks_p=%.3g calibrated=%s",
            method, r.n_tests, f["band_fraction"], r.ks_p, r.calibrated,
        )
    ok = "lmm" in reports and reports["lmm"].calibrated
    return EXIT_OK if ok else EXIT_CALIBRATION_FAILED


def cmd_report(args) -> int:
    path = Path(args.report)
    if path.is_dir():
        path = path / storage.CALIBRATION_SUMMARY
    summary = storage.read_calibration_summary(path)
    print(f"report: {path}")
    print(f"datasets pooled: {summary.get('n_datasets', '?')}")
    print(f"{'method':<12}{'n_tests':>9}{'in band':>9}{'KS p':>11}{'FPR@0.01':>10}{'band@0.01':>20}  verdict")
    for method, m in sorted(summary["methods"].items()):
        lo, hi = m["ci_at_0.01"]
        verdict = "calibrated" if m["calibrated"] else "NOT calibrated"
        print(
            f"{method:<12}{m['n_tests']:>9}{m['band_fraction']:>9.2f}{m['ks_p']:>11.3g}"
            f"{m['fpr_at_0.01']:>10.4f}{f'[{lo:.4f}, {hi:.4f}]':>20}  {verdict}"
        )
    print("overall:", "PASS" if summary.get("pass") else "FAIL")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base random seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="klmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate cohorts")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--grid", action="store_true", help="sweep the parameter grid")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--n-individuals", type=int, dest="n_individuals")
    p.add_argument("--n-snps", type=int, dest="n_snps")
    p.add_argument("--family-fraction", type=float, dest="family_fraction")
    p.add_argument("--offspring-per-pair", type=int, dest="offspring_per_pair")
    p.add_argument("--maf-range", type=float, nargs=2, dest="maf_range")
    p.add_argument("--n-causal", type=int, dest="n_causal")
    p.add_argument("--heritability", type=float)
    p.add_argument("--hidden", action="store_true", help="add hidden causal SNPs")
    p.add_argument("--n-hidden", type=int, dest="n_hidden")
    p.add_argument("--hidden-strength", type=float, dest="hidden_strength")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scan", parents=[common], help="association scan of dataset directories")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--method", choices=("lmm", "univariate", "both"), default="both")
    p.add_argument("--exclusion", choices=EXCLUSION_MODES, default="woodbury")
    p.add_argument("--refit-per-snp", action="store_true", dest="refit_per_snp")
    p.add_argument("--grid-points", type=int, dest="grid_points")
    p.add_argument("--test", choices=("lrt", "f"), default="lrt", help="univariate test statistic")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("calibrate", parents=[common], help="calibration report over scanned datasets")
    p.add_argument("results", nargs="+")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", parents=[common], help="pretty-print a calibration summary")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command in ("simulate", "calibrate") and not args.out:
        parser.error(f"{args.command} requires --out")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (KlmmError, OSError) as exc:
        print(f"klmm: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
