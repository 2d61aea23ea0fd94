"""Command-line pipeline: simulate -> reconstruct -> diagnose.

Exit codes: 0 on success (a non-converged reconstruction is still a success
and is flagged in the result), 2 for usage or configuration errors, 3 for
malformed or inconsistent data.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .dataio import (
    DataError,
    atomic_write_text,
    read_histogram_csv,
    read_json,
    sha256_file,
    write_csv,
    write_histogram_csv,
    write_json,
)
from .fock import MIN_CAPTURED_NORM
from .maxlik import (
    ReconstructionResult,
    extremal_residuals,
    relative_entropy,
    solve_diagonal,
    solve_mixed,
    solve_pure,
)
from .measurement import (
    build_random_phase_povm,
    build_tomography_projectors,
    correlation_matrix,
    drop_empty_bins,
    simulate_homodyne,
    simulate_random_phase,
)
from .subspace import factor_surface, overlap_operator, r_diagonal, recoverable_subspace, renormalize

log = logging.getLogger("maxlik_tomo")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class UsageError(ValueError):
    pass


def _projectors(cfg: ExperimentConfig, dim: int):
    grid = cfg.build_grid()
    if cfg.mode == "random-phase":
        return build_random_phase_povm(grid, dim)
    return build_tomography_projectors(grid, dim, cfg.grid.subsamples)


def _load_histogram(cfg: ExperimentConfig, path):
    return read_histogram_csv(path, cfg.build_grid(), random_phase=cfg.mode == "random-phase")


def run_simulate(cfg: ExperimentConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    grid = cfg.build_grid()
    state = cfg.state.build()
    if cfg.mode == "random-phase":
        data = simulate_random_phase(state, grid, cfg.total_records, cfg.seed)
    else:
        data = simulate_homodyne(state, grid, cfg.records_per_phase, cfg.seed)
    write_histogram_csv(out_dir / "histogram.csv", grid, data, random_phase=cfg.mode == "random-phase")
    meta = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "records_requested": cfg.total_records,
        "records_registered": data.total_n,
        "discarded": data.discarded,
        "discarded_fraction": data.discarded_fraction,
        "per_phase_discarded": list(data.per_phase_discarded),
        "n_phases": 1 if cfg.mode == "random-phase" else grid.n_phases,
        "n_bins": grid.n_bins,
        "entropy_S": data.entropy(),
        "config": cfg.to_dict(),
    }
    write_json(out_dir / "simulation.json", meta)
    return meta


def _method(cfg: ExperimentConfig, pure: bool = False, diagonal: bool = False) -> str:
    if pure and diagonal:
        raise UsageError("--pure and --diagonal are mutually exclusive")
    if cfg.mode == "random-phase":
        if pure:
            raise UsageError("--pure is not available in random-phase mode")
        return "diagonal"
    if diagonal:
        raise UsageError("--diagonal needs random-phase data (use --mode random-phase)")
    if pure:
        return "pure"
    if cfg.solver.method == "diagonal":
        raise UsageError("solver.method 'diagonal' needs mode 'random-phase'")
    return cfg.solver.method


def _reference_k(cfg: ExperimentConfig, projectors, freqs) -> dict | None:
    """Fit statistic of the configured true state, truncated to the working dimension."""
    try:
        state = cfg.state.build(projectors.dim)
    except ValueError:
        return None
    k = relative_entropy(state.density_matrix(), projectors, freqs)
    s = freqs.entropy()
    return {"rel_entropy_K": k, "rel_entropy_percent": 100.0 * k / s, "truncated_norm_min": MIN_CAPTURED_NORM}


def run_reconstruct(cfg: ExperimentConfig, histogram, out_dir, method: str | None = None) -> ReconstructionResult:
    method = method or _method(cfg)
    freqs_all = _load_histogram(cfg, histogram)
    projectors, freqs = drop_empty_bins(_projectors(cfg, cfg.dim), freqs_all)
    solver = {"mixed": solve_mixed, "pure": solve_pure, "diagonal": solve_diagonal}[method]
    t0 = time.perf_counter()
    result = solver(projectors, freqs, cfg.solver.build())
    elapsed = time.perf_counter() - t0
    if not result.converged:
        log.warning("reconstruction did not converge (residual %.3g after %d iterations)",
                    result.extremal_residual, result.iterations)
    out = result.to_dict()
    out["data"] = {"retained_cells": len(projectors), "total_n": freqs.total_n, "mode": cfg.mode}
    out["reference_state"] = _reference_k(cfg, projectors, freqs)
    if not projectors.rank_one:
        out["extremal_residuals"] = {"skipped": True, "reason": f"{projectors.kind.value} elements are not rank one"}
    elif len(projectors) > projectors.dim:
        # more kets than Fock levels: the correlation matrix is singular by construction
        out["extremal_residuals"] = {
            "skipped": True,
            "reason": f"{len(projectors)} retained cells exceed Fock dimension {projectors.dim}",
        }
    else:
        res = extremal_residuals(result.rho, projectors, freqs, correlation_matrix(projectors))
        out["extremal_residuals"] = res.to_dict()
    write_json(Path(out_dir) / "result.json", out)
    log.info("%s reconstruction: K/S = %.4f%% in %.1fs", method, result.rel_entropy_percent, elapsed)
    return result


def run_diagnose(cfg: ExperimentConfig, histogram, result_path, out_dir):
    out_dir = Path(out_dir)
    grid = cfg.build_grid()
    result = ReconstructionResult.from_dict(read_json(result_path))
    if result.rho.dim != cfg.dim:
        raise DataError(f"result dimension {result.rho.dim} does not match configured dim {cfg.dim}")
    projectors, freqs = drop_empty_bins(_projectors(cfg, cfg.dim), _load_histogram(cfg, histogram))
    renorm = renormalize(projectors, freqs, result.rho)
    overlap = overlap_operator(renorm)
    report = recoverable_subspace(
        overlap, cfg.lambda_tolerance, None if projectors.commuting else renorm
    )
    weighted = np.real(np.diagonal(overlap))
    unweighted = r_diagonal(projectors) if projectors.commuting else np.real(np.diagonal(projectors.operator_sum()))

    summary = report.to_dict()
    summary["mode"] = cfg.mode
    summary["r_diagonal_weighted"] = [float(v) for v in weighted]
    summary["r_diagonal_unweighted"] = [float(v) for v in unweighted]
    write_json(out_dir / "subspace.json", summary)
    write_csv(out_dir / "eigenvalues.csv", ("k", "eigenvalue", "recoverable"),
              [(k, lam, abs(lam - 1.0) <= cfg.lambda_tolerance) for k, lam in enumerate(report.eigenvalues)])
    write_csv(out_dir / "r_diagonal.csv", ("n", "weighted", "unweighted"),
              [(n, w, u) for n, (w, u) in enumerate(zip(weighted, unweighted))])
    write_csv(out_dir / "factors.csv", ("phase_index", "bin_index", "bin_center", "theta", "factor"),
              factor_surface(renorm, grid))
    return report


def run_pipeline(cfg: ExperimentConfig, out_root, method: str | None = None) -> Path:
    method = method or _method(cfg)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    run_dir = Path(out_root) / f"run-{stamp}-seed{cfg.seed}"
    suffix = 1
    while run_dir.exists():
        run_dir = Path(out_root) / f"run-{stamp}-seed{cfg.seed}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    atomic_write_text(run_dir / "config.json", cfg.to_json() + "\n")

    stages = [
        ("simulate", lambda: run_simulate(cfg, run_dir), ["config.json"], ["histogram.csv", "simulation.json"]),
        ("reconstruct", lambda: run_reconstruct(cfg, run_dir / "histogram.csv", run_dir, method),
         ["config.json", "histogram.csv"], ["result.json"]),
        ("diagnose", lambda: run_diagnose(cfg, run_dir / "histogram.csv", run_dir / "result.json", run_dir),
         ["config.json", "histogram.csv", "result.json"],
         ["subspace.json", "eigenvalues.csv", "r_diagonal.csv", "factors.csv"]),
    ]
    files = [{"path": "config.json", "sha256": sha256_file(run_dir / "config.json"), "stage": "input", "inputs": {}}]
    for name, fn, inputs, outputs in stages:
        try:
            fn()
        except (DataError, ValueError) as exc:
            raise type(exc)(f"stage {name}: {exc}") from exc
        input_hashes = {p: sha256_file(run_dir / p) for p in inputs}
        for p in outputs:
            files.append({"path": p, "sha256": sha256_file(run_dir / p), "stage": name, "inputs": input_hashes})
    manifest = {
        "metadata": {"created_utc": stamp, "version": __version__, "method": method},
        "files": files,
    }
    write_json(run_dir / "manifest.json", manifest)
    return run_dir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxlik-tomo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="."):
        p.add_argument("--config", type=Path, help="experiment config JSON (defaults reproduce the reference run)")
        p.add_argument("--seed", type=int, help="override the simulation seed")
        p.add_argument("--mode", choices=("tomography", "random-phase"))
        p.add_argument("--dim", type=int, help="Fock truncation used for reconstruction")
        p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")

    def solver_flags(p):
        p.add_argument("--pure", action="store_true", help="restrict the fit to pure states")
        p.add_argument("--diagonal", action="store_true", help="diagonal EM solver for random-phase data")
        p.add_argument("--restarts", type=int, help="random restarts to probe non-uniqueness")

    p = sub.add_parser("simulate", help="simulate homodyne histograms")
    common(p)
    p = sub.add_parser("reconstruct", help="maximum-likelihood reconstruction from a histogram")
    common(p)
    solver_flags(p)
    p.add_argument("--histogram", type=Path, required=True)
    p = sub.add_parser("diagnose", help="renormalization and recoverable-subspace diagnostics")
    common(p)
    p.add_argument("--histogram", type=Path, required=True)
    p.add_argument("--result", type=Path, required=True)
    p = sub.add_parser("pipeline", help="simulate, reconstruct and diagnose into a fresh run directory")
    common(p, out_default="runs")
    solver_flags(p)
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = args.mode
    if args.dim is not None:
        cfg.dim = args.dim
    if getattr(args, "restarts", None) is not None:
        cfg.solver = dataclasses.replace(cfg.solver, restarts=args.restarts)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        method = None
        if args.command in ("reconstruct", "pipeline"):
            method = _method(cfg, args.pure, args.diagonal)
    except FileNotFoundError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "simulate":
            meta = run_simulate(cfg, args.out)
            print(f"wrote {args.out / 'histogram.csv'} ({meta['records_registered']} registered records)")
        elif args.command == "reconstruct":
            res = run_reconstruct(cfg, args.histogram, args.out, method)
            flag = "" if res.converged else " (NOT converged)"
            print(f"{res.method}: K/S = {res.rel_entropy_percent:.4f}%, S = {res.entropy_S:.4f}{flag}")
        elif args.command == "diagnose":
            report = run_diagnose(cfg, args.histogram, args.result, args.out)
            print(f"recoverable_dim = {report.recoverable_dim} of {report.dim} "
                  f"(lambda tolerance {report.lambda_tolerance})")
        else:
            run_dir = run_pipeline(cfg, args.out, method)
            print(f"artifacts in {run_dir}")
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
