"""Uniform space and time meshes with two ghost layers per side.

Node ``i`` of a :class:`Grid1D` sits at ``x_min + i*h`` for ``i = -1, ..., I+2``.
Indices ``1..I`` are unknowns; ``-1, 0, I+1, I+2`` carry prescribed values.
Arrays that include the ghost layers ("padded" arrays) are stored with an
offset of two, so padded position ``i + 1`` holds node ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidArgumentError

# Padded position of node i is i + GHOST - 1; GHOST layers on each side.
GHOST = 2


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    interior_count: int

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.interior_count + 1)

    def node(self, i):
        """Coordinate of node ``i`` (scalar or array of indices)."""
        return self.x_min + np.asarray(i) * self.h

    @property
    def indices(self) -> np.ndarray:
        """All node indices ``-1..I+2`` in padded order."""
        return np.arange(-1, self.interior_count + 3)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.indices * self.h

    @property
    def interior(self) -> np.ndarray:
        return self.x_min + np.arange(1, self.interior_count + 1) * self.h

    @property
    def closure(self) -> np.ndarray:
        """Nodes ``0..I+1`` (interior plus the two boundary points)."""
        return self.x_min + np.arange(0, self.interior_count + 2) * self.h

    @property
    def ghost_mask(self) -> np.ndarray:
        mask = np.ones(self.interior_count + 4, dtype=bool)
        mask[GHOST:-GHOST] = False
        return mask

    def refine(self) -> "Grid1D":
        """Halve ``h``: ``I -> 2I+1``; coarse node ``i`` is fine node ``2i``."""
        return Grid1D(self.x_min, self.x_max, 2 * self.interior_count + 1)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    @property
    def tau(self) -> float:
        return self.T / self.steps

    def time(self, k):
        return np.asarray(k) * self.tau

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.tau


@dataclass(frozen=True)
class Grid2D:
    x: Grid1D
    y: Grid1D

    @property
    def hx(self) -> float:
        return self.x.h

    @property
    def hy(self) -> float:
        return self.y.h

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.interior_count, self.y.interior_count)

    def mesh(self, padded: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` arrays indexed ``[i, j]`` (x first)."""
        if padded:
            return np.meshgrid(self.x.nodes, self.y.nodes, indexing="ij")
        return np.meshgrid(self.x.interior, self.y.interior, indexing="ij")


class CFLCheck(NamedTuple):
    ok: bool
    margin: float
    ratio: float


def build_grid_1d(x_min: float, x_max: float, interior_count: int) -> Grid1D:
    if not (np.isfinite(x_min) and np.isfinite(x_max)) or x_min >= x_max:
        raise InvalidArgumentError(f"degenerate domain ({x_min}, {x_max})")
    if int(interior_count) != interior_count or interior_count < 1:
        raise InvalidArgumentError(f"interior_count must be an integer >= 1, got {interior_count}")
    return Grid1D(float(x_min), float(x_max), int(interior_count))


def build_grid_2d(x_min, x_max, nx, y_min, y_max, ny) -> Grid2D:
    return Grid2D(build_grid_1d(x_min, x_max, nx), build_grid_1d(y_min, y_max, ny))


def build_time_grid(T: float, steps: int) -> TimeGrid:
    if not T > 0:
        raise InvalidArgumentError(f"horizon must be positive, got {T}")
    if int(steps) != steps or steps < 1:
        raise InvalidArgumentError(f"steps must be an integer >= 1, got {steps}")
    return TimeGrid(float(T), int(steps))


def check_cfl(b_sup: float, tau: float, h: float, bound: float) -> CFLCheck:
    """Strict drift CFL test ``b_sup * tau / h < bound``.

    ``bound`` is 3/2 for BDF2 steps and 1 for the backward Euler step.
    A ratio within roundoff of the bound counts as a violation.
    """
    if tau <= 0 or h <= 0:
        raise InvalidArgumentError("tau and h must be positive")
    ratio = abs(b_sup) * tau / h
    margin = bound - ratio
    return CFLCheck(bool(margin > 1e-12 * bound), float(margin), float(ratio))
