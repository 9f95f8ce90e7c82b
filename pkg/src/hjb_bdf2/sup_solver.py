"""Gauss-Seidel fixed-point solver for ``sup_a (M_a X - q_a) = 0``.

Row ``i`` of the map sets ``x_i`` to the smallest root over controls of the
row equation, with already-updated values left of the diagonal and previous
values right of it. Under the row-ratio certificate (upper-row sum over
diagonal minus lower-row sum, maximised over rows and controls) the map is a
contraction in the max norm with factor ``ratio``, which gives the a
posteriori stopping rule ``|change| <= tol * (1 - ratio)``.

The sup-inf (Isaacs) variant uses ``x_i = min_a max_b root_ab`` and the same
kernel: a plain sup system is the special case of a singleton inner set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numba as nb
import numpy as np
import scipy.linalg

from .exceptions import (
    InvalidArgumentError,
    NonConvergenceError,
    NotDiagonallyDominantError,
    SingularMatrixError,
)
from .fd_ops import BandedMatrix, SupInfLinearSystem, SupLinearSystem, banded_matvec

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000

# Iterate changes below this fraction of max(1, |x|) are dominated by
# roundoff and are not used for the observed contraction factor.
CONTRACTION_FLOOR = 1e-3

_PENTA = np.arange(-2, 3)


class Certificate(NamedTuple):
    ratio: float
    per_row_worst: tuple
    feasible: bool
    # max over rows/controls of the upper-row sum; bounds residual/change
    upper_sum: float = 0.0


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual_inf: float
    contraction_estimate: float
    final_change: float = 0.0


# -- kernel ------------------------------------------------------------------


@nb.njit(cache=True, nogil=True)
def _sweep(offsets, zero_d, diags, inv_diag, rhs, xp, pad):
    """One in-place Gauss-Seidel sweep; returns the max-norm change."""
    n1, n2, no, n = diags.shape
    change = 0.0
    for i in range(n):
        k = i + pad
        best = np.inf
        for a in range(n1):
            worst = -np.inf
            for b in range(n2):
                s = rhs[a, b, i]
                for d in range(no):
                    if d != zero_d:
                        s -= diags[a, b, d, i] * xp[k + offsets[d]]
                root = s * inv_diag[a, b, i]
                if root > worst:
                    worst = root
            if worst < best:
                best = worst
        c = abs(best - xp[k])
        if c > change:
            change = c
        xp[k] = best
    return change


@nb.njit(cache=True, nogil=True)
def _sweep_penta(diags, inv_diag, rhs, xp):
    """:func:`_sweep` unrolled for offsets -2..2 (the 1D stencil)."""
    n1, n2, no, n = diags.shape
    change = 0.0
    for i in range(n):
        k = i + 2
        x0 = xp[k - 2]
        x1 = xp[k - 1]
        x3 = xp[k + 1]
        x4 = xp[k + 2]
        best = np.inf
        for a in range(n1):
            worst = -np.inf
            for b in range(n2):
                # x1 was just updated; keep it last so the serial chain is one FMA
                s = rhs[a, b, i] - diags[a, b, 3, i] * x3 - diags[a, b, 4, i] * x4 - diags[a, b, 0, i] * x0
                root = (s - diags[a, b, 1, i] * x1) * inv_diag[a, b, i]
                if root > worst:
                    worst = root
            if worst < best:
                best = worst
        c = abs(best - xp[k])
        if c > change:
            change = c
        xp[k] = best
    return change


@nb.njit(cache=True, nogil=True)
def _iterate(offsets, zero_d, diags, inv_diag, rhs, xp, pad, stop, max_iter, floor_rel, penta):
    """Sweep until ``change <= stop``.

    Returns (iterations, last change, largest observed change ratio).
    """
    n = diags.shape[3]
    prev = -1.0
    factor = 0.0
    it = 0
    change = np.inf
    while it < max_iter:
        if penta:
            change = _sweep_penta(diags, inv_diag, rhs, xp)
        else:
            change = _sweep(offsets, zero_d, diags, inv_diag, rhs, xp, pad)
        it += 1
        if prev > floor_rel:
            xmax = 1.0
            for i in range(n):
                v = abs(xp[i + pad])
                if v > xmax:
                    xmax = v
            if prev > floor_rel * xmax:
                f = change / prev
                if f > factor:
                    factor = f
        if change <= stop:
            break
        prev = change
    return it, change, factor


@nb.njit(cache=True, nogil=True)
def _residual_inf(offsets, diags, rhs, x):
    """``max_i |max_a min_b (M_ab x - q_ab)_i|``."""
    n1, n2, no, n = diags.shape
    out = 0.0
    for i in range(n):
        best = -np.inf
        for a in range(n1):
            worst = np.inf
            for b in range(n2):
                s = -rhs[a, b, i]
                for d in range(no):
                    j = i + offsets[d]
                    if 0 <= j < n:
                        s += diags[a, b, d, i] * x[j]
                if s < worst:
                    worst = s
            if worst > best:
                best = worst
        if abs(best) > out:
            out = abs(best)
    return out


# -- certificate -------------------------------------------------------------


def _as_4d(system):
    if isinstance(system, SupInfLinearSystem):
        return system.diags, system.rhs
    if isinstance(system, SupLinearSystem):
        return system.diags[:, None], system.rhs[:, None]
    raise InvalidArgumentError(f"unsupported system type {type(system).__name__}")


def _masked(offsets, diags):
    """Copy with entries whose column falls outside ``0..n-1`` zeroed."""
    n = diags.shape[-1]
    out = np.array(diags, dtype=float, copy=True)
    for d, off in enumerate(offsets):
        if off < 0:
            out[..., d, : min(-off, n)] = 0.0
        elif off > 0:
            out[..., d, max(n - off, 0):] = 0.0
    return out


@nb.njit(cache=True, nogil=True)
def _row_ratios(offsets, zero_d, diags):
    """Worst row ratio over ``[a, b, ., i]`` ignoring out-of-range entries.

    Returns (ratio, a, b, i, max upper sum, bad a, bad b, bad i); the bad
    indices are -1 unless some denominator is <= 0, in which case the first
    offending row is reported and the ratio is meaningless.
    """
    n1, n2, no, n = diags.shape
    worst, wa, wb, wi, umax = -1.0, 0, 0, 0, 0.0
    for a in range(n1):
        for b in range(n2):
            for i in range(n):
                lower = 0.0
                upper = 0.0
                for d in range(no):
                    j = i + offsets[d]
                    if d == zero_d or j < 0 or j >= n:
                        continue
                    if offsets[d] < 0:
                        lower += abs(diags[a, b, d, i])
                    else:
                        upper += abs(diags[a, b, d, i])
                denom = diags[a, b, zero_d, i] - lower
                if not denom > 0.0:
                    return np.nan, a, b, i, umax, a, b, i
                r = upper / denom
                if r > worst:
                    worst, wa, wb, wi = r, a, b, i
                if upper > umax:
                    umax = upper
    return worst, wa, wb, wi, umax, -1, -1, -1


def _certificate_4d(offsets, diags4) -> Certificate:
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    (zd,) = np.flatnonzero(offsets == 0)
    ratio, a, b, i, umax, ba, bb, bi = _row_ratios(offsets, int(zd), np.ascontiguousarray(diags4, dtype=float))
    paired = diags4.shape[1] > 1
    if bi >= 0:
        control = (int(ba), int(bb)) if paired else int(ba)
        raise NotDiagonallyDominantError(
            f"row {bi}, control {control}: diagonal does not exceed the lower-row sum",
            row=int(bi), control=control,
        )
    control = (int(a), int(b)) if paired else int(a)
    ratio = max(float(ratio), 0.0)
    return Certificate(ratio, (int(i), control), ratio < 1.0, float(umax))


def certificate(system) -> Certificate:
    """Row-ratio contraction certificate of a (sup or sup-inf) system.

    Raises :class:`NotDiagonallyDominantError` naming ``(row, control)`` when
    some diagonal does not exceed its lower-row sum.
    """
    diags4, _ = _as_4d(system)
    return _certificate_4d(system.offsets, diags4)


# -- solvers -----------------------------------------------------------------


def _solve(system, tol, max_iter, x0, cert):
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    if int(max_iter) != max_iter or max_iter < 1:
        raise InvalidArgumentError("max_iter must be a positive integer")
    if cert is None:
        cert = certificate(system)
    if not cert.feasible:
        raise NotDiagonallyDominantError(
            f"certificate ratio {cert.ratio:.6g} >= 1 at row/control {cert.per_row_worst}",
            row=cert.per_row_worst[0],
            control=cert.per_row_worst[1],
            certificate=cert,
        )
    diags4, rhs3 = _as_4d(system)
    offsets = np.ascontiguousarray(system.offsets, dtype=np.int64)
    (zero_d,) = np.flatnonzero(offsets == 0)
    pad = int(np.max(np.abs(offsets)))
    n = diags4.shape[-1]
    xp = np.zeros(n + 2 * pad)
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (n,):
            raise InvalidArgumentError(f"x0 must have shape ({n},)")
        xp[pad : pad + n] = x0
    # change <= tol(1-ratio) bounds the error by tol; change*upper bounds the residual
    stop = tol * (1.0 - cert.ratio)
    if cert.upper_sum > 0:
        stop = min(stop, tol / cert.upper_sum)
    diags4 = np.ascontiguousarray(diags4, dtype=float)
    rhs3 = np.ascontiguousarray(rhs3, dtype=float)
    inv_diag = 1.0 / diags4[:, :, int(zero_d)]
    it, change, factor = _iterate(
        offsets, int(zero_d), diags4, inv_diag, rhs3, xp, pad, stop, int(max_iter), CONTRACTION_FLOOR,
        bool(np.array_equal(offsets, _PENTA)),
    )
    x = xp[pad : pad + n].copy()
    res = _residual_inf(offsets, diags4, rhs3, x)
    stats = SolveStats(int(it), float(res), float(factor), float(change))
    if change > stop:
        raise NonConvergenceError(
            f"no convergence after {it} sweeps (last change {change:.3e}, target {stop:.3e})",
            stats=stats,
        )
    return x, stats


def solve_sup(
    system: SupLinearSystem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    x0: Optional[np.ndarray] = None,
    cert: Optional[Certificate] = None,
):
    """Solve ``sup_a (M_a X - q_a) = 0``; returns ``(X, SolveStats)``.

    ``x0`` is the starting iterate (zero if omitted). On success the max-norm
    distance to the exact fixed point and the residual are both below ``tol``.
    """
    return _solve(system, tol, max_iter, x0, cert)


def solve_supinf(
    system: SupInfLinearSystem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    x0: Optional[np.ndarray] = None,
    cert: Optional[Certificate] = None,
):
    """Solve ``sup_a inf_b (M_ab X - q_ab) = 0`` with ``x_i = min_a max_b root_ab``."""
    return _solve(system, tol, max_iter, x0, cert)


def solve_direct_single_control(M: BandedMatrix, q: np.ndarray) -> np.ndarray:
    """Banded LU with partial pivoting (LAPACK ``gbsv``)."""
    n = M.size
    q = np.asarray(q, dtype=float)
    if q.shape != (n,):
        raise InvalidArgumentError(f"q must have shape ({n},)")
    offsets = np.asarray(M.offsets)
    lo = int(max(0, -offsets.min()))
    up = int(max(0, offsets.max()))
    ab = np.zeros((lo + up + 1, n))
    rows = np.arange(n)
    for d, off in enumerate(offsets):
        cols = rows + off
        ok = (cols >= 0) & (cols < n)
        ab[up - off, cols[ok]] = M.data[d, ok]
    try:
        x = scipy.linalg.solve_banded((lo, up), ab, q)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("banded solve produced non-finite values")
    return x


# -- brute-force oracle --------------------------------------------------------


def random_feasible_system(rng: np.random.Generator, size: int, n_controls: int,
                           offsets=(-2, -1, 0, 1, 2)) -> SupLinearSystem:
    """Random system whose certificate ratio lies in roughly [0.05, 0.95]."""
    offsets = np.asarray(offsets)
    diags = _masked(offsets, rng.uniform(-1.0, 1.0, (n_controls, offsets.size, size)))
    (zd,) = np.flatnonzero(offsets == 0)
    lower = np.abs(diags[:, offsets < 0]).sum(axis=1)
    upper = np.abs(diags[:, offsets > 0]).sum(axis=1)
    theta = rng.uniform(0.05, 0.95, (n_controls, size))
    diags[:, zd] = lower + np.maximum(upper, 1e-3) / theta
    rhs = rng.normal(size=(n_controls, size))
    return SupLinearSystem(offsets, diags, rhs, tuple(range(n_controls)))


def brute_force_sup(system: SupLinearSystem, accept: float = 1e-9) -> np.ndarray:
    """Enumerate per-row control assignments, solving each linear system densely.

    Returns the solution of the assignment with the smallest sup-residual;
    raises if none has residual ``<= accept``.
    """
    mats = [m.to_dense() for m in system.matrices]
    n = system.size
    na = len(mats)
    best, best_res = None, np.inf
    for assign in np.ndindex(*([na] * n)):
        A = np.array([mats[a][i] for i, a in enumerate(assign)])
        q = np.array([system.rhs[a, i] for i, a in enumerate(assign)])
        x = np.linalg.solve(A, q)
        res = np.max(np.abs(system.residual(x)))
        if res < best_res:
            best, best_res = x, res
    if best_res > accept:
        raise AssertionError(f"no control assignment solves the system (best residual {best_res:.3g})")
    return best
