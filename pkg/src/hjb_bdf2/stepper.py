"""Time marching: BDF2 with a backward Euler start, implicit Euler, Crank-Nicolson,
the 2D BDF2 scheme and the Isaacs variant.

Every run aborts on the first failing step; no partial trajectory is returned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    CFLViolationError,
    HJBError,
    InvalidArgumentError,
    StepFailure,
)
from .fd_ops import (
    assemble_isaacs_system,
    assemble_step_system,
    assemble_step_system_2d,
    hamiltonian_1d,
    padded_boundary,
)
from .grid import GHOST, Grid1D, Grid2D, TimeGrid, check_cfl
from .problem import HJBProblem, HJBProblem2D, IsaacsProblem, sample
from .sup_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, SolveStats, certificate, solve_sup, solve_supinf

SCHEMES = ("bdf2", "euler", "cn", "bdf2-centered-drift")
CFL_BOUND = {"euler": 1.0, "bdf2": 1.5}


@dataclass(frozen=True)
class SolverOptions:
    """Fixed-point solver settings.

    ``warm_start='extrapolate'`` starts each solve from the quadratic
    extrapolation of the last three levels (linear, then constant, while
    fewer are available); ``'previous'`` starts from ``u^{k-1}``. The
    stopping rule bounds the error independently of the start.

    ``keep_levels=False`` stores only ``u^0`` and ``u^N`` (long reference runs).
    """

    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    warm_start: str = "extrapolate"
    keep_levels: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be a positive integer")
        if self.warm_start not in ("extrapolate", "previous"):
            raise InvalidArgumentError(f"unknown warm_start {self.warm_start!r}")


@dataclass(frozen=True)
class Trajectory:
    """Levels at interior nodes plus per-step diagnostics.

    ``levels[j]`` is the solution at step ``steps[j]``; normally all steps
    ``0..N`` are kept.
    """

    grid: object
    time: TimeGrid
    levels: np.ndarray
    scheme: str
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    stats: tuple = ()
    certificate_ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cfl_margins: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final(self) -> np.ndarray:
        return self.levels[-1]

    @property
    def total_iterations(self) -> int:
        return int(sum(s.iterations for s in self.stats))


def _start(levels, k, how):
    """Initial iterate for the solve producing level ``k``."""
    u1 = levels[k - 1]
    if how == "previous" or k == 1:
        return u1
    if k == 2:
        return 2.0 * u1 - levels[k - 2]
    return 3.0 * u1 - 3.0 * levels[k - 2] + levels[k - 3]


def _drift_sup(problem, t, x, controls):
    return max(float(np.max(np.abs(sample(problem.drift, t, x, *c, shape=x.shape, what="drift"))))
               for c in controls)


def _march(first_level, time, step_system, solve, options, on_system, cfl=None):
    """Shared loop. ``step_system(k, levels)`` builds the system for level ``k``.

    ``levels`` passed to the callbacks supports indexing by ``k-1..k-3``.
    """
    N = time.steps
    n = first_level.size
    if options.keep_levels:
        store = np.empty((N + 1, n))
        view = store
    else:
        store = np.empty((2, n))
        view = _Ring(n)
    view[0] = first_level.ravel()
    stats, ratios, margins = [], np.zeros(N), np.full(N, np.nan)
    for k in range(1, N + 1):
        if cfl is not None:
            chk, bound = cfl(k)
            margins[k - 1] = chk.margin
            if not chk.ok:
                raise CFLViolationError(
                    f"CFL violated at step {k}: b*tau/h = {chk.ratio:.6g} not < {bound}",
                    step=k, margin=chk.margin,
                )
        try:
            system = step_system(k, view)
            if on_system is not None:
                on_system(k, system)
            cert = certificate(system)
            ratios[k - 1] = cert.ratio
            x, st = solve(system, options.tol, options.max_iter,
                          x0=_start(view, k, options.warm_start), cert=cert)
        except CFLViolationError:
            raise
        except HJBError as exc:
            raise StepFailure(f"step {k} failed: {exc}", step=k, cause=exc) from exc
        view[k] = x
        stats.append(st)
    if not options.keep_levels:
        store[0] = first_level.ravel()
        store[1] = view[N]
    steps = np.arange(N + 1) if options.keep_levels else np.array([0, N])
    levels = store.reshape((store.shape[0],) + first_level.shape)
    return levels, steps, tuple(stats), ratios, margins


class _Ring:
    """Last three levels, indexed by absolute step number."""

    def __init__(self, n):
        self._buf = np.empty((3, n))

    def __getitem__(self, k):
        return self._buf[k % 3]

    def __setitem__(self, k, value):
        self._buf[k % 3] = value


def _check_options(options):
    return SolverOptions() if options is None else options


def _run_1d(problem: HJBProblem, grid: Grid1D, time: TimeGrid, options, scheme, on_system=None):
    options = _check_options(options)
    drift_mode = "centered" if scheme == "bdf2-centered-drift" else None
    mode_of = (lambda k: "euler") if scheme == "euler" else (lambda k: "euler" if k == 1 else "bdf2")
    x = grid.interior
    u0 = sample(problem.initial, x, shape=x.shape, what="initial")
    controls = [(a,) for a in problem.controls]

    def cfl(k):
        bound = CFL_BOUND[mode_of(k)]
        return check_cfl(_drift_sup(problem, time.time(k), x, controls), time.tau, grid.h, bound), bound

    def step_system(k, levels):
        mode = mode_of(k)
        hist = (levels[k - 1],) if mode == "euler" else (levels[k - 1], levels[k - 2])
        return assemble_step_system(problem, grid, float(time.time(k)), time.tau, hist, mode, drift_mode)

    levels, steps, stats, ratios, margins = _march(u0, time, step_system, solve_sup, options, on_system, cfl)
    return Trajectory(grid, time, levels, scheme, steps, stats, ratios, margins)


def run_bdf2(problem: HJBProblem, grid: Grid1D, time: TimeGrid, options: Optional[SolverOptions] = None,
             drift_mode: Optional[str] = None, on_system: Optional[Callable] = None) -> Trajectory:
    """BDF2 marching; level 1 comes from one backward Euler step.

    ``drift_mode='centered'`` swaps the one-sided drift stencils for the
    centered difference (scheme tag ``bdf2-centered-drift``).
    """
    mode = drift_mode or problem.drift_mode
    scheme = "bdf2-centered-drift" if mode == "centered" else "bdf2"
    return _run_1d(problem, grid, time, options, scheme, on_system)


def run_implicit_euler(problem: HJBProblem, grid: Grid1D, time: TimeGrid,
                       options: Optional[SolverOptions] = None, on_system=None) -> Trajectory:
    return _run_1d(problem, grid, time, options, "euler", on_system)


def run_crank_nicolson(problem: HJBProblem, grid: Grid1D, time: TimeGrid,
                       options: Optional[SolverOptions] = None, on_system=None) -> Trajectory:
    """Trapezoidal rule with centered drift.

    Each step solves ``sup_a ((I + tau/2 (L_a + r)) u^k - q_a) = 0`` with
    ``q_a = u^{k-1} - tau/2 H[u^{k-1}](t_{k-1}) - tau/2 l_a(t_k)``. No drift
    CFL test is applied; the certificate is still checked each step.
    """
    options = _check_options(options)
    x = grid.interior
    u0 = sample(problem.initial, x, shape=x.shape, what="initial")
    half = 0.5 * time.tau
    init_padded = sample(problem.initial, grid.nodes, shape=grid.nodes.shape, what="initial")

    def step_system(k, levels):
        t_prev = float(time.time(k - 1))
        if k == 1:
            padded = init_padded.copy()
        else:
            padded = np.array(padded_boundary(problem, grid, t_prev))
        padded[GHOST:-GHOST] = levels[k - 1]
        explicit = hamiltonian_1d(problem, grid, t_prev, padded, "centered")
        base = levels[k - 1] - half * explicit
        return assemble_step_system(problem, grid, float(time.time(k)), time.tau, None, "euler",
                                    "centered", weight=half, base=base)

    levels, steps, stats, ratios, margins = _march(u0, time, step_system, solve_sup, options, on_system)
    return Trajectory(grid, time, levels, "cn", steps, stats, ratios, margins)


def run_scheme(scheme: str, problem: HJBProblem, grid: Grid1D, time: TimeGrid,
               options: Optional[SolverOptions] = None, on_system=None) -> Trajectory:
    """Dispatch on a scheme tag from :data:`SCHEMES`."""
    if scheme == "bdf2":
        return run_bdf2(problem, grid, time, options, "bdf_upwind", on_system)
    if scheme == "bdf2-centered-drift":
        return run_bdf2(problem, grid, time, options, "centered", on_system)
    if scheme == "euler":
        return run_implicit_euler(problem, grid, time, options, on_system)
    if scheme == "cn":
        return run_crank_nicolson(problem, grid, time, options, on_system)
    raise InvalidArgumentError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def run_isaacs(problem: IsaacsProblem, grid: Grid1D, time: TimeGrid,
               options: Optional[SolverOptions] = None, on_system=None) -> Trajectory:
    """BDF2 marching of the sup-inf equation (Euler first step)."""
    options = _check_options(options)
    x = grid.interior
    u0 = sample(problem.initial, x, shape=x.shape, what="initial")
    pairs = [(a, b) for a in problem.sup_controls for b in problem.inf_controls]

    def cfl(k):
        bound = CFL_BOUND["euler" if k == 1 else "bdf2"]
        return check_cfl(_drift_sup(problem, time.time(k), x, pairs), time.tau, grid.h, bound), bound

    def step_system(k, levels):
        if k == 1:
            return assemble_isaacs_system(problem, grid, float(time.time(k)), time.tau, (levels[0],), "euler")
        return assemble_isaacs_system(problem, grid, float(time.time(k)), time.tau,
                                      (levels[k - 1], levels[k - 2]), "bdf2")

    levels, steps, stats, ratios, margins = _march(u0, time, step_system, solve_supinf, options, on_system, cfl)
    return Trajectory(grid, time, levels, "isaacs-bdf2", steps, stats, ratios, margins)


def run_bdf2_2d(problem: HJBProblem2D, grid: Grid2D, time: TimeGrid,
                options: Optional[SolverOptions] = None, on_system=None) -> Trajectory:
    """2D BDF2 marching; levels have shape ``(N+1, I1, I2)``.

    The drift CFL test is applied per axis.
    """
    options = _check_options(options)
    X, Y = grid.mesh()
    u0 = sample(problem.initial, X, Y, shape=X.shape, what="initial")

    def cfl(k):
        bound = CFL_BOUND["euler" if k == 1 else "bdf2"]
        t = float(time.time(k))
        worst = None
        for f, h in ((problem.drift1, grid.hx), (problem.drift2, grid.hy)):
            bsup = max(float(np.max(np.abs(sample(f, t, X, Y, a, shape=X.shape)))) for a in problem.controls)
            chk = check_cfl(bsup, time.tau, h, bound)
            if worst is None or chk.margin < worst.margin:
                worst = chk
        return worst, bound

    def step_system(k, levels):
        t = float(time.time(k))
        if k == 1:
            return assemble_step_system_2d(problem, grid, t, time.tau, (levels[0],), "euler")
        return assemble_step_system_2d(problem, grid, t, time.tau, (levels[k - 1], levels[k - 2]), "bdf2")

    levels, steps, stats, ratios, margins = _march(u0, time, step_system, solve_sup, options, on_system, cfl)
    return Trajectory(grid, time, levels, "bdf2-2d", steps, stats, ratios, margins)


def write_profile_csv(path, trajectory: Trajectory, k: Optional[int] = None) -> None:
    """Write level ``k`` (default: final) as CSV rows ``t, x, u`` or ``t, x, y, u``."""
    if k is None:
        k = trajectory.time.steps
    (j,) = np.flatnonzero(trajectory.steps == k)
    t = float(trajectory.time.time(k))
    u = trajectory.levels[j]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(trajectory.grid, Grid2D):
            w.writerow(["t", "x", "y", "u"])
            X, Y = trajectory.grid.mesh()
            for xv, yv, uv in zip(X.ravel(), Y.ravel(), u.ravel()):
                w.writerow([repr(t), repr(float(xv)), repr(float(yv)), repr(float(uv))])
        else:
            w.writerow(["t", "x", "u"])
            for xv, uv in zip(trajectory.grid.interior, u):
                w.writerow([repr(t), repr(float(xv)), repr(float(uv))])
