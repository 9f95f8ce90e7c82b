"""Discrete norms, error measurement, convergence tables and the stability
coefficients of the two-step recursion."""

from __future__ import annotations

import io
import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import HJBError, InvalidArgumentError
from .fd_ops import apply_stencil_1d, operator_coefficients_1d
from .grid import GHOST, Grid1D
from .problem import HJBProblem, sample


class NormKind(str, Enum):
    L2_RESCALED = "l2_rescaled"
    H1_RESCALED = "h1_rescaled"
    A_NORM = "a_norm"
    EUCLIDEAN = "euclidean"
    SUP = "sup"


# Short names used in tables and configs.
TABLE_NORMS = {"h1": NormKind.H1_RESCALED, "l2": NormKind.L2_RESCALED, "inf": NormKind.SUP}


def _kind(kind) -> NormKind:
    if isinstance(kind, NormKind):
        return kind
    if kind in TABLE_NORMS:
        return TABLE_NORMS[kind]
    try:
        return NormKind(kind)
    except ValueError:
        raise InvalidArgumentError(f"unknown norm {kind!r}") from None


def norm(u, kind, h: Optional[float] = None) -> float:
    """Discrete norm of interior values ``u``.

    ``a_norm`` is ``sqrt(sum ((u_i - u_{i-1}) / h)^2)`` over ``i = 1..I+1``
    with ``u_0 = u_{I+1} = 0``; the rescaled norms multiply by ``sqrt(h)``.
    """
    kind = _kind(kind)
    u = np.asarray(u, dtype=float).ravel()
    if kind is NormKind.SUP:
        return float(np.max(np.abs(u))) if u.size else 0.0
    if kind is NormKind.EUCLIDEAN:
        return float(np.linalg.norm(u))
    if h is None or not h > 0:
        raise InvalidArgumentError(f"{kind.value} needs a positive h")
    if kind is NormKind.L2_RESCALED:
        return float(np.linalg.norm(u) * math.sqrt(h))
    jumps = np.diff(np.concatenate(([0.0], u, [0.0]))) / h
    a = float(np.linalg.norm(jumps))
    return a if kind is NormKind.A_NORM else a * math.sqrt(h)


def _norms(e, norms, h):
    return {name: norm(e, name, h) for name in norms}


def error_vs_exact(traj, exact: Optional[Callable], norms: Sequence[str] = ("h1", "l2", "inf"),
                   min_step: int = 2) -> dict:
    """Max over stored steps ``k >= min_step`` of each norm of ``u^k - v(t_k, .)``."""
    if exact is None:
        raise InvalidArgumentError("problem has no exact solution")
    grid = traj.grid
    if not isinstance(grid, Grid1D):
        raise InvalidArgumentError("error_vs_exact supports 1D trajectories")
    x = grid.interior
    out = {name: 0.0 for name in norms}
    used = False
    for u, k in zip(traj.levels, traj.steps):
        if k < min_step:
            continue
        used = True
        v = sample(exact, float(traj.time.time(k)), x, shape=x.shape, what="exact")
        for name, val in _norms(u - v, norms, grid.h).items():
            out[name] = max(out[name], val)
    if not used:
        raise InvalidArgumentError(f"no stored level with k >= {min_step}")
    return out


def restrict(fine: np.ndarray, fine_grid: Grid1D, coarse_grid: Grid1D) -> np.ndarray:
    """Fine interior values at the coarse interior nodes (nested grids)."""
    nf, nc = fine_grid.interior_count + 1, coarse_grid.interior_count + 1
    same_domain = math.isclose(fine_grid.x_min, coarse_grid.x_min) and math.isclose(
        fine_grid.x_max, coarse_grid.x_max)
    if not same_domain or nf % nc:
        raise InvalidArgumentError(f"grids with {nc} and {nf} intervals are not nested")
    m = nf // nc
    # coarse node i is fine node i*m; interior arrays start at node 1
    return np.asarray(fine)[m * np.arange(1, nc) - 1]


def error_vs_reference(traj, ref, norms: Sequence[str] = ("h1", "l2", "inf")) -> dict:
    """Final-time errors against a nested finer reference trajectory."""
    if not math.isclose(traj.time.T, ref.time.T, rel_tol=1e-12):
        raise InvalidArgumentError("reference final time differs")
    r = restrict(ref.final, ref.grid, traj.grid)
    return _norms(traj.final - r, norms, traj.grid.h)


# -- consistency ---------------------------------------------------------------


@dataclass(frozen=True)
class SmoothFunction:
    """A test function with analytic derivatives, all vectorised in ``x``."""

    value: Callable
    t_deriv: Callable
    x_deriv: Callable
    xx_deriv: Callable


_LEAD = {"bdf2": (1.5, -2.0, 0.5), "euler": (1.0, -1.0, 0.0)}


def consistency_error(scheme: str, phi: SmoothFunction, problem: HJBProblem, grid: Grid1D,
                      time, k: int) -> np.ndarray:
    """Truncation error of the scheme applied to ``phi`` at step ``k``.

    The discrete operator is evaluated with ``phi`` itself at the ghost nodes,
    so the result measures stencil accuracy only.
    """
    if scheme in ("bdf2", "bdf2-centered-drift"):
        weights = _LEAD["bdf2"]
        if k < 2:
            raise InvalidArgumentError("bdf2 consistency needs k >= 2")
    elif scheme == "euler":
        weights = _LEAD["euler"]
        if k < 1:
            raise InvalidArgumentError("euler consistency needs k >= 1")
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    centered = scheme == "bdf2-centered-drift" or problem.drift_mode == "centered"
    tau, h = time.tau, grid.h
    t = float(time.time(k))
    x = grid.interior
    dt = sum(w * phi.value(t - j * tau, x) for j, w in enumerate(weights)) / tau
    padded = phi.value(t, grid.nodes)
    phi_x, phi_xx, phi_v = phi.x_deriv(t, x), phi.xx_deriv(t, x), phi.value(t, x)
    disc, cont = [], []
    for a in problem.controls:
        sig = sample(problem.sigma, t, x, a, shape=x.shape)
        b = sample(problem.drift, t, x, a, shape=x.shape)
        r = sample(problem.discount, t, x, a, shape=x.shape)
        ell = sample(problem.source, t, x, a, shape=x.shape)
        coef = operator_coefficients_1d(sig, b, r, h, centered)
        disc.append(apply_stencil_1d(coef, padded) + ell)
        cont.append(-0.5 * sig**2 * phi_xx + b * phi_x + r * phi_v + ell)
    scheme_val = dt + np.max(disc, axis=0)
    pde_val = phi.t_deriv(t, x) + np.max(cont, axis=0)
    return scheme_val - pde_val


# -- convergence tables --------------------------------------------------------


def observed_order(coarse: float, fine: float, floor: float = 0.0) -> Optional[float]:
    """``log2(coarse / fine)``, or ``None`` when undefined.

    Errors at or below ``floor`` (roundoff level) give no order.
    """
    if not (np.isfinite(coarse) and np.isfinite(fine)) or coarse <= floor or fine <= floor:
        return None
    if coarse <= 0 or fine <= 0:
        return None
    return math.log2(coarse / fine)


@dataclass
class ConvergenceRow:
    N: int
    I_plus_1: int
    errors: dict
    orders: dict
    cpu_s: float
    failure: Optional[str] = None
    extra: dict = field(default_factory=dict)


@dataclass
class ConvergenceTable:
    rows: list
    norms: tuple
    metadata: dict = field(default_factory=dict)

    def error(self, norm_name: str) -> np.ndarray:
        return np.array([r.errors.get(norm_name, np.nan) for r in self.rows])

    def order(self, norm_name: str) -> np.ndarray:
        return np.array([np.nan if r.orders.get(norm_name) is None else r.orders[norm_name]
                         for r in self.rows])

    @property
    def ok(self) -> bool:
        return all(r.failure is None for r in self.rows)

    def to_csv(self) -> str:
        """CSV text; errors as ``%.2E``, orders as ``%.2f``, ``--`` if undefined."""
        buf = io.StringIO()
        cols = ["N", "I_plus_1"]
        for n in ("h1", "l2", "inf"):
            cols += [f"err_{n}", f"ord_{n}"]
        cols.append("cpu_s")
        buf.write(",".join(cols) + "\n")
        for j, row in enumerate(self.rows):
            cells = [str(row.N), str(row.I_plus_1)]
            for n in ("h1", "l2", "inf"):
                if row.failure is not None:
                    cells += ["FAILED", "FAILED"]
                    continue
                e = row.errors.get(n)
                cells.append("" if e is None else f"{e:.2E}")
                if j == 0 or n not in self.norms:
                    cells.append("")
                else:
                    o = row.orders.get(n)
                    cells.append("--" if o is None else f"{o:.2f}")
            cells.append(f"{row.cpu_s:.2f}")
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


class LadderRowError(HJBError):
    """A ladder row's run failed."""

    def __init__(self, message, row, N, I_plus_1, cause):
        super().__init__(message)
        self.row = row
        self.N = N
        self.I_plus_1 = I_plus_1
        self.cause = cause


def ladder(N0: int, I0_plus_1: int, levels: int) -> list:
    if levels < 1 or N0 < 1 or I0_plus_1 < 2:
        raise InvalidArgumentError("ladder needs N0 >= 1, I0+1 >= 2, levels >= 1")
    return [(N0 * 2**j, I0_plus_1 * 2**j) for j in range(levels)]


def convergence_table(runner: Callable, rungs: Sequence[tuple], error: Callable,
                      norms: Sequence[str] = ("h1", "l2", "inf"), *, threads: int = 1,
                      on_error: str = "raise", metadata: Optional[dict] = None,
                      floor: float = 0.0) -> ConvergenceTable:
    """Run ``runner(N, I_plus_1)`` per rung and tabulate ``error(traj)``.

    ``error`` returns a dict keyed by norm name. With ``on_error='mark'`` a
    failing rung is recorded (and its neighbours' orders left undefined)
    instead of raising :class:`LadderRowError`. Orders involving an error
    ``<= floor`` are left undefined.
    """
    rungs = [(int(n), int(i)) for n, i in rungs]
    for (n0, i0), (n1, i1) in zip(rungs, rungs[1:]):
        if n1 != 2 * n0 or i1 != 2 * i0:
            raise InvalidArgumentError("ladder must double both N and I+1")
    if on_error not in ("raise", "mark"):
        raise InvalidArgumentError("on_error must be 'raise' or 'mark'")

    def one(j):
        N, I1 = rungs[j]
        t0 = _time.process_time()
        try:
            traj = runner(N, I1)
            errs = error(traj)
        except HJBError as exc:
            if on_error == "raise":
                raise LadderRowError(f"row {j} (N={N}, I+1={I1}) failed: {exc}", j, N, I1, exc) from exc
            return ConvergenceRow(N, I1, {}, {}, _time.process_time() - t0, failure=str(exc))
        return ConvergenceRow(N, I1, {n: float(errs[n]) for n in norms}, {}, _time.process_time() - t0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(rungs))))
    else:
        rows = [one(j) for j in range(len(rungs))]
    for prev, row in zip(rows, rows[1:]):
        if prev.failure is None and row.failure is None:
            row.orders = {n: observed_order(prev.errors[n], row.errors[n], floor) for n in norms}
        else:
            row.orders = {n: None for n in norms}
    return ConvergenceTable(rows, tuple(norms), dict(metadata or {}))


# -- stability coefficients ------------------------------------------------------


@dataclass(frozen=True)
class StabilityCoefficients:
    C: float
    tau: float
    count: int
    lambda1: float
    lambda2: float
    a: np.ndarray
    inverse_min: float


def m_tau(C: float, tau: float, size: int) -> np.ndarray:
    """Upper-triangular Toeplitz ``(3 - C tau) I - 4 J + J^2``."""
    J = np.eye(size, k=1)
    return (3.0 - C * tau) * np.eye(size) - 4.0 * J + J @ J


def stability_coefficients(C: float, tau: float, count: int) -> StabilityCoefficients:
    """``a_p = sum_j lambda1^-(j+1) lambda2^-(p-j+1)`` for ``p = 0..count``,
    with ``lambda_{1,2} = 2 +- sqrt(1 + C tau)``.

    ``inverse_min`` is the smallest entry of the directly inverted
    ``m_tau(C, tau, count + 1)``.
    """
    if C < 0 or not tau > 0 or int(count) != count or count < 0:
        raise InvalidArgumentError("need C >= 0, tau > 0 and an integer count >= 0")
    if C * tau >= 3:
        raise InvalidArgumentError(f"C*tau = {C * tau} must be < 3")
    root = math.sqrt(1.0 + C * tau)
    l1, l2 = 2.0 + root, 2.0 - root
    p = np.arange(count + 1)
    a = np.array([sum(l1 ** -(j + 1) * l2 ** -(q - j + 1) for j in range(q + 1)) for q in p])
    inv = np.linalg.inv(m_tau(C, tau, count + 1))
    return StabilityCoefficients(float(C), float(tau), int(count), l1, l2, a, float(inv.min()))


def oscillation_metric(u) -> float:
    """``max_i |u_{i-1} - 2 u_i + u_{i+1}|`` over the given vector."""
    u = np.asarray(u, dtype=float)
    if u.size < 3:
        return 0.0
    return float(np.max(np.abs(u[:-2] - 2 * u[1:-1] + u[2:])))
