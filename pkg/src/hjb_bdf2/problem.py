"""Problem definitions, the two benchmark problems, and assumption checkers.

Coefficient callbacks are vectorised in ``x``: they receive ``t`` and the
control as scalars and ``x`` (and ``y`` in 2D) as arrays, and may return
either an array of matching shape or a scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import AssemblyError, InvalidArgumentError
from .grid import Grid1D, Grid2D, TimeGrid

DRIFT_MODES = ("bdf_upwind", "centered")


def _zero(*args):
    return 0.0


@dataclass(frozen=True)
class HJBProblem:
    """``v_t + sup_a { -1/2 sigma^2 v_xx + b v_x + r v + l } = 0``."""

    controls: tuple
    sigma: Callable
    drift: Callable
    discount: Callable
    source: Callable
    initial: Callable
    boundary: Callable
    exact: Optional[Callable] = None
    drift_mode: str = "bdf_upwind"
    x_min: float = 0.0
    x_max: float = 1.0
    horizon: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        if not self.controls:
            raise InvalidArgumentError("control set must be nonempty")
        if self.drift_mode not in DRIFT_MODES:
            raise InvalidArgumentError(f"unknown drift_mode {self.drift_mode!r}")

    def with_drift_mode(self, mode: str) -> "HJBProblem":
        return _replace(self, drift_mode=mode)


@dataclass(frozen=True)
class IsaacsProblem:
    """``v_t + sup_{a in sup_controls} inf_{b in inf_controls} {...} = 0``.

    Coefficients take ``(t, x, a, b)``.
    """

    sup_controls: tuple
    inf_controls: tuple
    sigma: Callable
    drift: Callable
    discount: Callable
    source: Callable
    initial: Callable
    boundary: Callable
    exact: Optional[Callable] = None
    drift_mode: str = "bdf_upwind"
    x_min: float = 0.0
    x_max: float = 1.0
    horizon: float = 1.0
    name: str = "custom-isaacs"

    def __post_init__(self):
        object.__setattr__(self, "sup_controls", tuple(self.sup_controls))
        object.__setattr__(self, "inf_controls", tuple(self.inf_controls))
        if not self.sup_controls or not self.inf_controls:
            raise InvalidArgumentError("both control sets must be nonempty")
        if self.drift_mode not in DRIFT_MODES:
            raise InvalidArgumentError(f"unknown drift_mode {self.drift_mode!r}")

    def fix_inf_control(self, b) -> HJBProblem:
        """The HJB problem obtained by freezing the minimising player's control."""
        return HJBProblem(
            controls=self.sup_controls,
            sigma=lambda t, x, a: self.sigma(t, x, a, b),
            drift=lambda t, x, a: self.drift(t, x, a, b),
            discount=lambda t, x, a: self.discount(t, x, a, b),
            source=lambda t, x, a: self.source(t, x, a, b),
            initial=self.initial,
            boundary=self.boundary,
            exact=self.exact,
            drift_mode=self.drift_mode,
            x_min=self.x_min,
            x_max=self.x_max,
            horizon=self.horizon,
            name=f"{self.name}[b={b}]",
        )


@dataclass(frozen=True)
class HJBProblem2D:
    """2D HJB problem with covariance ``[[s1^2, rho s1 s2], [rho s1 s2, s2^2]]``.

    Coefficients take ``(t, x, y, a)``.
    """

    controls: tuple
    sigma1: Callable
    sigma2: Callable
    rho: Callable
    drift1: Callable
    drift2: Callable
    discount: Callable
    source: Callable
    initial: Callable
    boundary: Callable
    exact: Optional[Callable] = None
    x_range: tuple = (0.0, 1.0)
    y_range: tuple = (0.0, 1.0)
    horizon: float = 1.0
    name: str = "custom-2d"

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        if not self.controls:
            raise InvalidArgumentError("control set must be nonempty")


def _replace(obj, **changes):
    from dataclasses import replace

    return replace(obj, **changes)


def sample(f: Callable, *args, shape=None, what: str = "coefficient") -> np.ndarray:
    """Evaluate a coefficient callback and broadcast to ``shape``.

    Raises :class:`AssemblyError` on any non-finite sample, naming the point.
    """
    out = np.asarray(f(*args), dtype=float)
    if shape is not None:
        out = np.broadcast_to(out, shape)
    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.isfinite(out.ravel()))[0]
        t = args[0]
        x = np.broadcast_to(np.asarray(args[1], dtype=float), out.shape).ravel()[bad]
        # scalar trailing arguments are the control(s); arrays are coordinates
        control = tuple(v for v in args[2:] if np.ndim(v) == 0) or None
        raise AssemblyError(
            f"non-finite {what} at t={t}, x={x}, control={control}", t=t, x=x, control=control
        )
    return out


# -- benchmark problems ------------------------------------------------------


def bump(x):
    """``max(0, 1 - x^2)^4``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(0.0, 1.0 - x * x) ** 4


def eikonal_problem() -> HJBProblem:
    """``v_t + |v_x| = 0`` on (-2, 2), T = 0.2, written as a max over a in {-1, 1}."""

    def exact(t, x):
        x = np.asarray(x, dtype=float)
        return np.minimum(bump(x - t), bump(x + t))

    return HJBProblem(
        controls=(-1.0, 1.0),
        sigma=_zero,
        drift=lambda t, x, a: a,
        discount=_zero,
        source=_zero,
        initial=bump,
        boundary=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        exact=exact,
        x_min=-2.0,
        x_max=2.0,
        horizon=0.2,
        name="eikonal",
    )


def eikonal_problem_negative() -> HJBProblem:
    """Same equation with the datum ``-max(0, 1 - x^2)^4``.

    The Hopf-Lax formula gives ``v(t, x) = min_{|y-x| <= t} v0(y)``: a flat
    bottom at -1 for ``|x| <= t`` and the shifted bump ``-w(|x| - t)`` outside.
    """

    def initial(x):
        return -bump(x)

    def exact(t, x):
        x = np.asarray(x, dtype=float)
        s = np.maximum(np.abs(x) - t, 0.0)
        return -bump(s)

    return HJBProblem(
        controls=(-1.0, 1.0),
        sigma=_zero,
        drift=lambda t, x, a: a,
        discount=_zero,
        source=_zero,
        initial=initial,
        boundary=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        exact=exact,
        x_min=-2.0,
        x_max=2.0,
        horizon=0.2,
        name="eikonal-neg",
    )


def controlled_diffusion_problem(sigmas: Sequence[float] = (0.1, 0.5)) -> HJBProblem:
    """``v_t + sup_{s in {0.1, 0.5}} (-1/2 s^2 v_xx) = 0`` on (-1, 1), T = 0.5.

    Zero boundary values at all four ghost/boundary nodes; no exact solution.
    """
    return HJBProblem(
        controls=tuple(float(s) for s in sigmas),
        sigma=lambda t, x, a: a,
        drift=_zero,
        discount=_zero,
        source=_zero,
        initial=lambda x: np.sin(np.pi * np.asarray(x, dtype=float)),
        boundary=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        exact=None,
        x_min=-1.0,
        x_max=1.0,
        horizon=0.5,
        name="controlled-diffusion",
    )


def heat_problem(sigma: float = 1.0, x_min: float = -1.0, x_max: float = 1.0, horizon: float = 0.5):
    """Singleton-control heat flow ``v_t = 1/2 sigma^2 v_xx`` with exact solution
    ``exp(-pi^2 sigma^2 t / 2) sin(pi x)``; boundary values from the exact solution."""
    rate = 0.5 * (np.pi * sigma) ** 2

    def exact(t, x):
        return np.exp(-rate * t) * np.sin(np.pi * np.asarray(x, dtype=float))

    return HJBProblem(
        controls=(sigma,),
        sigma=lambda t, x, a: a,
        drift=_zero,
        discount=_zero,
        source=_zero,
        initial=lambda x: exact(0.0, x),
        boundary=exact,
        exact=exact,
        x_min=x_min,
        x_max=x_max,
        horizon=horizon,
        name="heat",
    )


BUILTIN_PROBLEMS = {
    "eikonal": eikonal_problem,
    "eikonal-neg": eikonal_problem_negative,
    "controlled-diffusion": controlled_diffusion_problem,
}


def builtin_problem(name: str) -> HJBProblem:
    try:
        return BUILTIN_PROBLEMS[name]()
    except KeyError:
        raise InvalidArgumentError(
            f"unknown scenario {name!r}; expected one of {sorted(BUILTIN_PROBLEMS)}"
        ) from None


# -- assumption checks -------------------------------------------------------


@dataclass
class AssumptionReport:
    """Sampled witnesses for the standing assumptions on the coefficients:
    boundedness (a1), ellipticity (a2), Lipschitz continuity of ``sigma`` (a3)
    and of the drift together with semiconcavity of ``sigma^2`` (a4).

    ``a2_ellipticity_eta`` is the sampled infimum of ``sigma^2``; the
    Lipschitz constants are maxima of first divided differences between
    consecutive nodes of the closed mesh, and ``a4_semiconcavity_L2`` is
    ``max(0, -min second divided difference of sigma^2)``.
    """

    a1_bounded: dict
    a2_ellipticity_eta: float
    a3_sigma_lipschitz_L: float
    a3_control_independent: bool
    a4_drift_lipschitz_L1: float
    a4_semiconcavity_L2: float
    a4_control_independent: bool
    samples: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


def _coefficient_table(f, times, x, controls):
    """Array ``[k, a, i]`` of samples."""
    return np.stack(
        [np.stack([sample(f, t, x, a, shape=x.shape) for a in controls]) for t in times]
    )


def check_assumptions(problem: HJBProblem, grid: Grid1D, time: TimeGrid) -> AssumptionReport:
    x = grid.closure
    h = grid.h
    times = time.times
    sig = _coefficient_table(problem.sigma, times, x, problem.controls)
    b = _coefficient_table(problem.drift, times, x, problem.controls)
    r = _coefficient_table(problem.discount, times, x, problem.controls)
    s2 = sig**2

    lip_s2 = float(np.max(np.abs(np.diff(s2, axis=-1)))) / h if x.size > 1 else 0.0
    lip_b = float(np.max(np.abs(np.diff(b, axis=-1)))) / h if x.size > 1 else 0.0
    if x.size > 2:
        second = (s2[..., :-2] - 2 * s2[..., 1:-1] + s2[..., 2:]) / h**2
        semiconc = max(0.0, -float(np.min(second)))
    else:
        semiconc = 0.0

    def control_free(arr):
        return bool(np.allclose(arr, arr[:, :1, :], rtol=0, atol=0))

    return AssumptionReport(
        a1_bounded={
            "sigma": float(np.max(np.abs(sig))),
            "drift": float(np.max(np.abs(b))),
            "discount": float(np.max(np.abs(r))),
        },
        a2_ellipticity_eta=float(np.min(s2)),
        a3_sigma_lipschitz_L=lip_s2,
        a3_control_independent=control_free(s2),
        a4_drift_lipschitz_L1=lip_b,
        a4_semiconcavity_L2=semiconc,
        a4_control_independent=control_free(s2) and control_free(b),
        samples={
            "times": int(times.size),
            "nodes": int(x.size),
            "controls": len(problem.controls),
            "h": h,
            "tau": time.tau,
            "x_range": [grid.x_min, grid.x_max],
        },
    )


@dataclass
class AssumptionReport2D:
    """Sampled witnesses for (A1')-(A3') and the sign of ``rho``."""

    a1_drift_sup: dict
    a2_eta: float
    a3_lipschitz: dict
    rho_min: float
    rho_max: float
    samples: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


def check_assumptions_2d(problem: HJBProblem2D, grid: Grid2D, time: TimeGrid) -> AssumptionReport2D:
    X, Y = np.meshgrid(grid.x.closure, grid.y.closure, indexing="ij")
    shape = X.shape
    s1, s2, rho, b1, b2 = ([] for _ in range(5))
    for t in time.times:
        for a in problem.controls:
            s1.append(sample(problem.sigma1, t, X, Y, a, shape=shape))
            s2.append(sample(problem.sigma2, t, X, Y, a, shape=shape))
            rho.append(sample(problem.rho, t, X, Y, a, shape=shape))
            b1.append(sample(problem.drift1, t, X, Y, a, shape=shape))
            b2.append(sample(problem.drift2, t, X, Y, a, shape=shape))
    s1, s2, rho, b1, b2 = map(np.array, (s1, s2, rho, b1, b2))
    cross = rho * s1 * s2
    eta = float(min(np.min(s1**2 - cross), np.min(s2**2 - cross)))

    def lip(f):
        gx = np.max(np.abs(np.diff(f, axis=1))) / grid.hx if f.shape[1] > 1 else 0.0
        gy = np.max(np.abs(np.diff(f, axis=2))) / grid.hy if f.shape[2] > 1 else 0.0
        return float(max(gx, gy))

    return AssumptionReport2D(
        a1_drift_sup={"b1": float(np.max(np.abs(b1))), "b2": float(np.max(np.abs(b2)))},
        a2_eta=eta,
        a3_lipschitz={"s1s1": lip(s1 * s1), "s1s2": lip(s1 * s2), "s2s2": lip(s2 * s2)},
        rho_min=float(np.min(rho)),
        rho_max=float(np.max(rho)),
        samples={"times": int(time.times.size), "shape": list(shape), "controls": len(problem.controls)},
    )
