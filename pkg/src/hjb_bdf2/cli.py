"""Command-line front end.

    hjb-bdf2 --config run.cfg [--out-dir DIR] [--threads N] [--dump-profiles] [--dump-matrices]
    hjb-bdf2 --seed 7 [--count 1000]        randomized solver self-check

The config format is documented in :mod:`hjb_bdf2.config`.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import threading
import time as _time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    convergence_table,
    error_vs_exact,
    error_vs_reference,
    ladder,
    oscillation_metric,
)
from .config import RunConfig, parse_config
from .exceptions import ConfigError, HJBError
from .fd_ops import format_banded
from .grid import build_grid_1d, build_time_grid
from .problem import check_assumptions
from .stepper import SolverOptions, run_implicit_euler, run_scheme, write_profile_csv
from .sup_solver import brute_force_sup, certificate, random_feasible_system, solve_sup

log = logging.getLogger("hjb_bdf2")

# relative to the initial datum's max; about 1000 ulps
ROUNDOFF_FLOOR = 2e-13


def _clean(obj):
    """JSON-safe copy: NaN/inf -> None, numpy scalars -> Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _grids(problem, N, I_plus_1):
    return (build_grid_1d(problem.x_min, problem.x_max, I_plus_1 - 1),
            build_time_grid(problem.horizon, N))


def _validate_ladder(config: RunConfig, problem, rungs):
    length = problem.x_max - problem.x_min
    line = config.lines.get("cfl")
    for N, I1 in rungs:
        ratio = (problem.horizon / N) / (length / I1)
        if not math.isclose(ratio, config.cfl, rel_tol=1e-9):
            raise ConfigError(
                f"ladder row N={N}, I+1={I1} has tau/h = {ratio:.6g}, not cfl = {config.cfl}", line=line)
    if config.reference == "exact" and problem.exact is None:
        raise ConfigError("problem has no exact solution; use reference = euler",
                          line=config.lines.get("reference"))
    if config.reference == "euler":
        for _, I1 in rungs:
            if config.reference_i_plus_1 % I1:
                raise ConfigError(
                    f"reference.i_plus_1 = {config.reference_i_plus_1} is not a multiple of I+1 = {I1}",
                    line=config.lines.get("reference.i_plus_1"))


def _row_summary(traj) -> dict:
    stats = traj.stats
    return {
        "certificate_worst_ratio": float(np.max(traj.certificate_ratios)) if stats else 0.0,
        "cfl_min_margin": float(np.nanmin(traj.cfl_margins)) if np.any(np.isfinite(traj.cfl_margins)) else None,
        "solver": {
            "solves": len(stats),
            "total_iterations": int(sum(s.iterations for s in stats)),
            "max_iterations": int(max((s.iterations for s in stats), default=0)),
            "max_final_residual": float(max((s.final_residual_inf for s in stats), default=0.0)),
            "max_contraction_estimate": float(max((s.contraction_estimate for s in stats), default=0.0)),
        },
        "oscillation": oscillation_metric(traj.final),
    }


def run_scenario(config: RunConfig, out_dir, threads: int = 1, dump_profiles: bool = False,
                 dump_matrices: bool = False) -> int:
    """Execute a configured ladder; returns the process exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.load_problem()
    rungs = ladder(*config.ladder)
    _validate_ladder(config, problem, rungs)
    dump_profiles = dump_profiles or config.dump_profiles
    dump_matrices = dump_matrices or config.dump_matrices
    report: dict = {"version": __version__, "config": config.to_dict(), "problem": problem.name}

    options = SolverOptions(config.tol, config.max_iter, config.warm_start,
                            keep_levels=config.reference == "exact")
    ref_opts = SolverOptions(config.tol, config.max_iter, config.warm_start, keep_levels=False)

    reference = None
    if config.reference == "euler":
        t0 = _time.process_time()
        grid, tgrid = _grids(problem, config.reference_steps, config.reference_i_plus_1)
        log.info("computing Euler reference N=%d, I+1=%d", config.reference_steps, config.reference_i_plus_1)
        reference = run_implicit_euler(problem, grid, tgrid, ref_opts)
        report["reference"] = {"steps": config.reference_steps, "i_plus_1": config.reference_i_plus_1,
                               "cpu_s": _time.process_time() - t0, **_row_summary(reference)}

    summaries: dict = {}
    finals: dict = {}
    lock = threading.Lock()

    def runner(N, I1):
        grid, tgrid = _grids(problem, N, I1)
        hook = None
        if dump_matrices:
            def hook(k, system):
                if k <= 2:
                    _dump_system(out / f"matrices_N{N}_I{I1}_k{k}", system)
        traj = run_scheme(config.scheme, problem, grid, tgrid, options, on_system=hook)
        with lock:
            summaries[(N, I1)] = _row_summary(traj)
            if reference is not None:
                finals[(N, I1)] = traj
        if dump_profiles:
            write_profile_csv(out / f"profile_N{N}_I{I1}.csv", traj)
        return traj

    if reference is None:
        def error(traj):
            return error_vs_exact(traj, problem.exact, config.norms, min_step=config.min_step)
    else:
        def error(traj):
            return error_vs_reference(traj, reference, config.norms)

    # errors this close to roundoff of the data carry no order information
    g_fine, _ = _grids(problem, *rungs[-1])
    scale = float(np.max(np.abs(problem.initial(g_fine.interior)), initial=1.0))
    floor = ROUNDOFF_FLOOR * scale

    log.info("running %d ladder rows with scheme %s", len(rungs), config.scheme)
    table = convergence_table(runner, rungs, error, config.norms, threads=threads, on_error="mark",
                              metadata={"scheme": config.scheme, "problem": problem.name,
                                        "cfl": config.cfl, "reference": config.reference},
                              floor=floor)
    table.write_csv(out / config.csv_name)

    if reference is not None and config.do_halving_check and table.rows[-1].failure is None:
        report["reference"]["halving_check"] = _halving_check(
            config, problem, ref_opts, table, finals[(table.rows[-1].N, table.rows[-1].I_plus_1)])

    try:
        g, tg = _grids(problem, *rungs[-1])
        report["assumptions"] = check_assumptions(problem, g, tg).to_dict()
    except HJBError as exc:
        report["assumptions"] = {"error": str(exc)}

    rows = []
    for row in table.rows:
        rows.append({"N": row.N, "I_plus_1": row.I_plus_1, "errors": row.errors, "orders": row.orders,
                     "cpu_s": row.cpu_s, "failure": row.failure, **summaries.get((row.N, row.I_plus_1), {})})
    report["rows"] = rows
    certificates_ok = all(r.get("certificate_worst_ratio", 1.0) < 1.0 for r in rows if r["failure"] is None)
    report["ok"] = table.ok and certificates_ok
    with open(out / config.report_name, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(report), fh, indent=2)
        fh.write("\n")
    return 0 if report["ok"] else 1


def _halving_check(config, problem, ref_opts, table, traj) -> dict:
    """Finest-row errors against a reference with half the time steps."""
    half = config.reference_steps // 2
    grid, tgrid = _grids(problem, half, config.reference_i_plus_1)
    coarse_ref = run_implicit_euler(problem, grid, tgrid, ref_opts)
    errs = error_vs_reference(traj, coarse_ref, config.norms)
    base = table.rows[-1].errors
    rel = {n: abs(errs[n] - base[n]) / base[n] if base[n] > 0 else 0.0 for n in config.norms}
    return {"steps": half, "errors": errs, "relative_change": rel,
            "max_relative_change": max(rel.values())}


def _dump_system(stem: Path, system) -> None:
    for a, m in enumerate(system.matrices):
        with open(f"{stem}_a{a}.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# t={system.t!r} tau={system.tau!r} control={system.controls[a]!r}\n")
            fh.write(format_banded(m))
        np.savetxt(f"{stem}_a{a}_rhs.txt", system.rhs[a], fmt="%.17g")


def run_selfcheck(seed: int, count: int = 1000, accept: float = 1e-9) -> dict:
    """Solver against the brute-force oracle on random feasible systems."""
    rng = np.random.default_rng(seed)
    worst_err, worst_excess, failures = 0.0, -np.inf, 0
    for _ in range(count):
        system = random_feasible_system(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        cert = certificate(system)
        x, stats = solve_sup(system, cert=cert)
        err = float(np.max(np.abs(x - brute_force_sup(system))))
        excess = stats.contraction_estimate - cert.ratio
        worst_err = max(worst_err, err)
        worst_excess = max(worst_excess, excess)
        if err > accept or excess > 1e-12:
            failures += 1
    return {"seed": seed, "count": count, "max_error": worst_err,
            "max_contraction_excess": worst_excess, "failures": failures}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjb-bdf2", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", type=Path, help="run configuration file")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--threads", type=int, default=1, help="ladder rows run concurrently")
    p.add_argument("--dump-profiles", action="store_true", help="write final-time profile CSVs")
    p.add_argument("--dump-matrices", action="store_true", help="write step systems of steps 1 and 2")
    p.add_argument("--seed", type=int, help="run the randomized solver self-check with this seed")
    p.add_argument("--count", type=int, default=1000, help="systems in the self-check")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.config is None and args.seed is None:
        build_parser().print_usage(sys.stderr)
        print("hjb-bdf2: one of --config or --seed is required", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("hjb-bdf2: --threads must be >= 1", file=sys.stderr)
        return 2
    status = 0
    if args.seed is not None:
        res = run_selfcheck(args.seed, args.count)
        print(json.dumps(_clean(res)))
        status = 0 if res["failures"] == 0 else 1
    if args.config is not None:
        try:
            config = parse_config(args.config.read_text(encoding="utf-8"))
            status = max(status, run_scenario(config, args.out_dir, args.threads,
                                              args.dump_profiles, args.dump_matrices))
        except ConfigError as exc:
            print(f"hjb-bdf2: {args.config}: {exc}", file=sys.stderr)
            return 2
        except OSError as exc:
            print(f"hjb-bdf2: {exc}", file=sys.stderr)
            return 2
        except HJBError as exc:
            print(f"hjb-bdf2: run failed: {exc}", file=sys.stderr)
            return 1
    return status


if __name__ == "__main__":
    sys.exit(main())
