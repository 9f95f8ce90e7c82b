"""Finite-difference stencils and assembly of the implicit step systems.

One implicit step of the scheme reads ``sup_a (M_a X - q_a) = 0`` where each
``M_a`` is banded. Matrices are stored row-aligned: ``data[d, i]`` holds
``M[i, i + offsets[d]]``. Entries that would couple to a ghost/boundary node
are zero in storage; their contribution lives in ``q_a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import InvalidArgumentError, UnsupportedCorrelationError
from .grid import GHOST, Grid1D, Grid2D
from .problem import HJBProblem, HJBProblem2D, IsaacsProblem, sample

OFFSETS_1D = np.arange(-2, 3)


# -- banded storage ----------------------------------------------------------


@dataclass(frozen=True)
class BandedMatrix:
    """Square matrix with explicit diagonal offsets, row-aligned storage."""

    offsets: np.ndarray
    data: np.ndarray

    @property
    def size(self) -> int:
        return self.data.shape[-1]

    def diagonal(self, offset: int) -> np.ndarray:
        (d,) = np.flatnonzero(self.offsets == offset)
        return self.data[d]

    def to_dense(self) -> np.ndarray:
        n = self.size
        out = np.zeros((n, n))
        rows = np.arange(n)
        for d, off in enumerate(self.offsets):
            cols = rows + off
            ok = (cols >= 0) & (cols < n)
            out[rows[ok], cols[ok]] = self.data[d, ok]
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return banded_matvec(self.offsets, self.data, x)


def banded_matvec(offsets: np.ndarray, data: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``M x`` for row-aligned storage; ``data`` may carry leading batch axes."""
    n = x.shape[-1]
    out = np.zeros(data.shape[:-2] + (n,))
    for d, off in enumerate(offsets):
        lo, hi = max(0, -off), min(n, n - off)
        out[..., lo:hi] += data[..., d, lo:hi] * x[lo + off : hi + off]
    return out


def penta_matrix(lower2, lower1, diag, upper1, upper2) -> BandedMatrix:
    """Pentadiagonal matrix from row-aligned diagonals of equal length."""
    data = np.array([lower2, lower1, diag, upper1, upper2], dtype=float)
    return BandedMatrix(OFFSETS_1D.copy(), data)


def tri_matrix(lower, diag, upper) -> BandedMatrix:
    data = np.array([lower, diag, upper], dtype=float)
    return BandedMatrix(np.arange(-1, 2), data)


def format_banded(matrix: BandedMatrix) -> str:
    """Plain-text dump: one row per line, row index then one value per offset."""
    lines = ["# row " + " ".join(f"off{o:+d}" for o in matrix.offsets)]
    for i in range(matrix.size):
        vals = " ".join(f"{v:.17g}" for v in matrix.data[:, i])
        lines.append(f"{i} {vals}")
    return "\n".join(lines) + "\n"


# -- 1D stencils on padded vectors -------------------------------------------


def _check_h(h):
    if not h > 0:
        raise InvalidArgumentError(f"h must be positive, got {h}")


def _core(u, ghost, shift):
    u = np.asarray(u, dtype=float)
    n = u.shape[-1] - 2 * ghost
    if n < 1:
        raise InvalidArgumentError("padded vector too short for the ghost width")
    return u[..., ghost + shift : ghost + shift + n]


def d2(u, h: float, ghost: int = GHOST) -> np.ndarray:
    """``(u[i-1] - 2u[i] + u[i+1]) / h^2`` over the non-ghost entries."""
    _check_h(h)
    return (_core(u, ghost, -1) - 2 * _core(u, ghost, 0) + _core(u, ghost, 1)) / h**2


def d1_minus(u, h: float, ghost: int = GHOST) -> np.ndarray:
    """Left-sided BDF2 derivative ``(3u[i] - 4u[i-1] + u[i-2]) / (2h)``."""
    _check_h(h)
    if ghost < 2:
        raise InvalidArgumentError("d1_minus needs two ghost values on the left")
    return (3 * _core(u, ghost, 0) - 4 * _core(u, ghost, -1) + _core(u, ghost, -2)) / (2 * h)


def d1_plus(u, h: float, ghost: int = GHOST) -> np.ndarray:
    """Right-sided BDF2 derivative ``-(3u[i] - 4u[i+1] + u[i+2]) / (2h)``."""
    _check_h(h)
    if ghost < 2:
        raise InvalidArgumentError("d1_plus needs two ghost values on the right")
    return -(3 * _core(u, ghost, 0) - 4 * _core(u, ghost, 1) + _core(u, ghost, 2)) / (2 * h)


def d1_centered(u, h: float, ghost: int = GHOST) -> np.ndarray:
    _check_h(h)
    return (_core(u, ghost, 1) - _core(u, ghost, -1)) / (2 * h)


def assemble_a_matrix(I: int, h: float) -> BandedMatrix:
    """``tridiag(-1, 2, -1) / h^2`` of size ``I``."""
    if int(I) != I or I < 1:
        raise InvalidArgumentError(f"I must be an integer >= 1, got {I}")
    _check_h(h)
    off = np.full(I, -1.0 / h**2)
    off_lo, off_hi = off.copy(), off.copy()
    off_lo[0] = 0.0
    off_hi[-1] = 0.0
    return tri_matrix(off_lo, np.full(I, 2.0 / h**2), off_hi)


def operator_coefficients_1d(sigma, drift, discount, h: float, centered: bool = False) -> np.ndarray:
    """Stencil weights of ``L^a u + r u`` for offsets -2..2.

    Returns an array ``[5, ...]`` broadcast over the inputs' shape.
    """
    sigma, drift, discount = np.broadcast_arrays(
        np.asarray(sigma, float), np.asarray(drift, float), np.asarray(discount, float)
    )
    s = 0.5 * sigma**2 / h**2
    c = np.zeros((5,) + s.shape)
    c[1] = -s
    c[2] = 2 * s + discount
    c[3] = -s
    if centered:
        c[1] -= drift / (2 * h)
        c[3] += drift / (2 * h)
    else:
        bp = np.maximum(drift, 0.0) / (2 * h)
        bm = np.maximum(-drift, 0.0) / (2 * h)
        c[0] = bp
        c[1] -= 4 * bp
        c[2] += 3 * bp + 3 * bm
        c[3] -= 4 * bm
        c[4] = bm
    return c


def apply_stencil_1d(coefs: np.ndarray, u_padded: np.ndarray) -> np.ndarray:
    """``sum_o coefs[o, ..., i] * u[i + o]`` with ``u`` padded by two ghosts."""
    n = u_padded.shape[-1] - 2 * GHOST
    out = np.zeros(coefs.shape[1:])
    for d, off in enumerate(OFFSETS_1D):
        out += coefs[d] * u_padded[GHOST + off : GHOST + off + n]
    return out


# -- step systems ------------------------------------------------------------


@dataclass(frozen=True)
class SupLinearSystem:
    """``sup_a (M_a X - q_a) = 0`` with ``diags[a, d, i]`` and ``rhs[a, i]``."""

    offsets: np.ndarray
    diags: np.ndarray
    rhs: np.ndarray
    controls: tuple
    t: float = 0.0
    tau: float = 0.0
    h: object = 0.0

    def __post_init__(self):
        if self.diags.ndim != 3 or self.rhs.ndim != 2:
            raise InvalidArgumentError("diags must be [control, offset, row], rhs [control, row]")
        if self.diags.shape[0] == 0:
            raise InvalidArgumentError("system needs at least one control")
        if self.diags.shape[0] != self.rhs.shape[0] or self.diags.shape[2] != self.rhs.shape[1]:
            raise InvalidArgumentError("diags and rhs shapes disagree")

    @property
    def size(self) -> int:
        return self.diags.shape[-1]

    @property
    def matrices(self) -> list[BandedMatrix]:
        return [BandedMatrix(self.offsets, d) for d in self.diags]

    def residual(self, x: np.ndarray) -> np.ndarray:
        """Componentwise ``max_a (M_a x - q_a)``."""
        return np.max(banded_matvec(self.offsets, self.diags, x) - self.rhs, axis=0)


@dataclass(frozen=True)
class SupInfLinearSystem:
    """``sup_a inf_b (M_ab X - q_ab) = 0`` with ``diags[a, b, d, i]``."""

    offsets: np.ndarray
    diags: np.ndarray
    rhs: np.ndarray
    sup_controls: tuple
    inf_controls: tuple
    t: float = 0.0
    tau: float = 0.0
    h: object = 0.0

    def __post_init__(self):
        if self.diags.ndim != 4 or self.rhs.ndim != 3:
            raise InvalidArgumentError("diags must be [a, b, offset, row], rhs [a, b, row]")
        if min(self.diags.shape[:2]) == 0:
            raise InvalidArgumentError("both control sets must be nonempty")

    @property
    def size(self) -> int:
        return self.diags.shape[-1]

    def residual(self, x: np.ndarray) -> np.ndarray:
        vals = banded_matvec(self.offsets, self.diags, x) - self.rhs
        return np.max(np.min(vals, axis=1), axis=0)


STEP_MODES = {"bdf2": 1.5, "euler": 1.0}


def _history_term(history, mode):
    if mode == "bdf2":
        if len(history) != 2:
            raise InvalidArgumentError("bdf2 step needs (u^{k-1}, u^{k-2})")
        u1, u2 = (np.asarray(h, dtype=float) for h in history)
        return 2.0 * u1 - 0.5 * u2
    if mode == "euler":
        u1 = history[0] if isinstance(history, (tuple, list)) else history
        return np.asarray(u1, dtype=float)
    raise InvalidArgumentError(f"unknown step mode {mode!r}")


def _fold_ghosts_1d(coef: np.ndarray, ghost_values: np.ndarray):
    """Split stencil weights into in-range storage and a ghost contribution.

    ``coef`` is ``[..., 5, I]`` and is modified in place into the storage
    array; returns (storage, contribution[..., I]).
    """
    I = coef.shape[-1]
    contrib = np.zeros(coef.shape[:-2] + (I,))
    for d, off in enumerate(OFFSETS_1D):
        if off < 0:
            rows = np.arange(0, min(-off, I))
        elif off > 0:
            rows = np.arange(max(I - off, 0), I)
        else:
            continue
        # row index r is node r+1; its neighbour node r+1+off sits at padded r+off+GHOST
        contrib[..., rows] += coef[..., d, rows] * ghost_values[rows + off + GHOST]
        coef[..., d, rows] = 0.0
    return coef, contrib


def _finish_1d(op_coef, ell, *, lead, weight, base, ghost_values):
    """Scale operator weights into ``M`` and build ``q``."""
    coef = weight * op_coef
    coef[..., 2, :] += lead
    storage, contrib = _fold_ghosts_1d(coef, ghost_values)
    rhs = base - weight * ell - contrib
    return storage, rhs


def _sample_1d(problem, t, x, *controls):
    shape = x.shape
    return (
        sample(problem.sigma, t, x, *controls, shape=shape, what="sigma"),
        sample(problem.drift, t, x, *controls, shape=shape, what="drift"),
        sample(problem.discount, t, x, *controls, shape=shape, what="discount"),
        sample(problem.source, t, x, *controls, shape=shape, what="source"),
    )


def control_coefficients_1d(problem: HJBProblem, grid: Grid1D, t: float, drift_mode=None):
    """Operator weights ``[a, 5, I]`` and sources ``[a, I]`` at time ``t``."""
    centered = (drift_mode or problem.drift_mode) == "centered"
    x = grid.interior
    coefs, ells = [], []
    for a in problem.controls:
        sig, b, r, ell = _sample_1d(problem, t, x, a)
        coefs.append(operator_coefficients_1d(sig, b, r, grid.h, centered))
        ells.append(ell)
    return np.array(coefs), np.array(ells)


def padded_boundary(problem, grid: Grid1D, t: float) -> np.ndarray:
    return sample(problem.boundary, t, grid.nodes, shape=grid.nodes.shape, what="boundary")


def assemble_step_system(
    problem: HJBProblem,
    grid: Grid1D,
    t_k: float,
    tau: float,
    history,
    mode: str = "bdf2",
    drift_mode: Optional[str] = None,
    *,
    weight: Optional[float] = None,
    base: Optional[np.ndarray] = None,
) -> SupLinearSystem:
    """Per-control matrices and right-hand sides of one implicit step.

    ``mode='bdf2'`` takes ``history=(u^{k-1}, u^{k-2})`` and gives
    ``M_a = 3/2 I + tau (L^a + r)``, ``q_a = 2u^{k-1} - u^{k-2}/2 - tau l``.
    ``mode='euler'`` takes ``history=(u^{k-1},)`` and gives ``M_a = I + tau (L^a + r)``,
    ``q_a = u^{k-1} - tau l``. Ghost values come from ``problem.boundary(t_k, .)``.

    ``weight`` and ``base`` override the operator scaling and the history
    term (used by the trapezoidal scheme).
    """
    if tau <= 0:
        raise InvalidArgumentError("tau must be positive")
    lead = STEP_MODES.get(mode)
    if lead is None:
        raise InvalidArgumentError(f"unknown step mode {mode!r}")
    if base is None:
        base = _history_term(history, mode)
    if base.shape[-1] != grid.interior_count:
        raise InvalidArgumentError("history vectors must have one entry per interior node")
    op, ell = control_coefficients_1d(problem, grid, t_k, drift_mode)
    storage, rhs = _finish_1d(
        op, ell, lead=lead, weight=tau if weight is None else weight, base=base,
        ghost_values=padded_boundary(problem, grid, t_k),
    )
    return SupLinearSystem(OFFSETS_1D.copy(), storage, rhs, problem.controls, t_k, tau, grid.h)


def hamiltonian_1d(problem: HJBProblem, grid: Grid1D, t: float, u_padded: np.ndarray, drift_mode=None):
    """``H[u](t, x_i) = max_a {L^a u + r u + l}`` at interior nodes."""
    op, ell = control_coefficients_1d(problem, grid, t, drift_mode)
    return np.max(apply_stencil_1d(np.moveaxis(op, 1, 0), u_padded) + ell, axis=0)


def assemble_isaacs_system(
    problem: IsaacsProblem,
    grid: Grid1D,
    t_k: float,
    tau: float,
    history,
    mode: str = "bdf2",
) -> SupInfLinearSystem:
    """Doubly indexed analogue of :func:`assemble_step_system`."""
    lead = STEP_MODES.get(mode)
    if lead is None:
        raise InvalidArgumentError(f"unknown step mode {mode!r}")
    base = _history_term(history, mode)
    centered = problem.drift_mode == "centered"
    x = grid.interior
    ops, ells = [], []
    for a in problem.sup_controls:
        row_op, row_ell = [], []
        for b in problem.inf_controls:
            sig, drift, r, ell = _sample_1d(problem, t_k, x, a, b)
            row_op.append(operator_coefficients_1d(sig, drift, r, grid.h, centered))
            row_ell.append(ell)
        ops.append(row_op)
        ells.append(row_ell)
    storage, rhs = _finish_1d(
        np.array(ops), np.array(ells), lead=lead, weight=tau, base=base,
        ghost_values=padded_boundary(problem, grid, t_k),
    )
    return SupInfLinearSystem(
        OFFSETS_1D.copy(), storage, rhs, problem.sup_controls, problem.inf_controls, t_k, tau, grid.h
    )


# -- 2D ----------------------------------------------------------------------


def stencil_coefficients_2d(sigma1, sigma2, rho, hx: float, hy: float):
    """Weights ``(alpha, beta, gamma)`` of the seven-point second-order stencil.

    ``s1^2 v_xx + 2 rho s1 s2 v_xy + s2^2 v_yy`` is approximated by
    ``alpha*dxx + beta*dyy + gamma*ddiag`` with undivided second differences
    along x, y and the (1, 1) diagonal. Only ``0 <= rho <= 1`` is supported.
    """
    if not (hx > 0 and hy > 0):
        raise InvalidArgumentError("hx and hy must be positive")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise UnsupportedCorrelationError("negative correlation is not supported by the 7-point stencil")
    if np.any(rho > 1):
        raise InvalidArgumentError("rho must lie in [0, 1]")
    s1 = np.asarray(sigma1, dtype=float) / hx
    s2 = np.asarray(sigma2, dtype=float) / hy
    alpha = s1 * (s1 - rho * s2)
    beta = s2 * (s2 - rho * s1)
    gamma = rho * s1 * s2
    return alpha, beta, gamma


def operator_stencil_2d(sigma1, sigma2, rho, b1, b2, r, hx, hy):
    """List of ``((di, dj), weight)`` for ``L^a u + r u`` in 2D (BDF upwind drift)."""
    alpha, beta, gamma = stencil_coefficients_2d(sigma1, sigma2, rho, hx, hy)
    entries: dict = {}

    def add(key, w):
        entries[key] = entries.get(key, 0.0) + w

    add((0, 0), alpha + beta + gamma + r)
    for key, w in (((-1, 0), alpha), ((1, 0), alpha), ((0, -1), beta), ((0, 1), beta),
                   ((-1, -1), gamma), ((1, 1), gamma)):
        add(key, -0.5 * w)
    for axis, b, h in ((0, b1, hx), (1, b2, hy)):
        bp = np.maximum(b, 0.0) / (2 * h)
        bm = np.maximum(-b, 0.0) / (2 * h)

        def key(s):
            return (s, 0) if axis == 0 else (0, s)

        add(key(-2), bp)
        add(key(-1), -4 * bp)
        add((0, 0), 3 * bp + 3 * bm)
        add(key(1), -4 * bm)
        add(key(2), bm)
    return sorted(entries.items())


def assemble_step_system_2d(
    problem: HJBProblem2D,
    grid: Grid2D,
    t_k: float,
    tau: float,
    history,
    mode: str = "bdf2",
) -> SupLinearSystem:
    """2D step system over interior nodes in row-major ``(i, j)`` order.

    The flattened index of node ``(i, j)`` is ``(i-1)*I2 + (j-1)``, so an x
    neighbour sits at offset ``+-I2`` and a y neighbour at ``+-1``.
    """
    lead = STEP_MODES.get(mode)
    if lead is None:
        raise InvalidArgumentError(f"unknown step mode {mode!r}")
    I1, I2 = grid.shape
    base = _history_term([np.asarray(h).reshape(-1) for h in history], mode) if mode == "bdf2" \
        else _history_term(np.asarray(history[0]).reshape(-1), mode)
    X, Y = grid.mesh()
    XP, YP = grid.mesh(padded=True)
    ghosts = sample(problem.boundary, t_k, XP, YP, shape=XP.shape, what="boundary")
    ii, jj = np.meshgrid(np.arange(1, I1 + 1), np.arange(1, I2 + 1), indexing="ij")

    per_offset: dict = {}
    rhs_all = []
    n = I1 * I2
    na = len(problem.controls)
    for ai, a in enumerate(problem.controls):
        shape = X.shape
        s1 = sample(problem.sigma1, t_k, X, Y, a, shape=shape, what="sigma1")
        s2 = sample(problem.sigma2, t_k, X, Y, a, shape=shape, what="sigma2")
        rho = sample(problem.rho, t_k, X, Y, a, shape=shape, what="rho")
        b1 = sample(problem.drift1, t_k, X, Y, a, shape=shape, what="drift1")
        b2 = sample(problem.drift2, t_k, X, Y, a, shape=shape, what="drift2")
        r = sample(problem.discount, t_k, X, Y, a, shape=shape, what="discount")
        ell = sample(problem.source, t_k, X, Y, a, shape=shape, what="source")
        rhs = base - tau * ell.reshape(-1)
        for (di, dj), w in operator_stencil_2d(s1, s2, rho, b1, b2, r, grid.hx, grid.hy):
            w = tau * np.broadcast_to(w, shape)
            if di == 0 and dj == 0:
                w = w + lead
            ti, tj = ii + di, jj + dj
            inside = (ti >= 1) & (ti <= I1) & (tj >= 1) & (tj <= I2)
            ghost_vals = ghosts[ti + GHOST - 1, tj + GHOST - 1]
            rhs = rhs - np.where(inside, 0.0, w * ghost_vals).reshape(-1)
            off = di * I2 + dj
            store = per_offset.setdefault(off, np.zeros((na, n)))
            store[ai] += np.where(inside, w, 0.0).reshape(-1)
        rhs_all.append(rhs)
    offsets = np.array(sorted(per_offset))
    diags = np.stack([per_offset[o] for o in offsets], axis=1)
    return SupLinearSystem(offsets, diags, np.array(rhs_all), problem.controls, t_k, tau, (grid.hx, grid.hy))
