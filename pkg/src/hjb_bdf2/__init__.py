"""BDF2 finite-difference schemes for Hamilton-Jacobi-Bellman and Isaacs equations."""

from .exceptions import (
    AssemblyError,
    CFLViolationError,
    ConfigError,
    HJBError,
    InvalidArgumentError,
    NonConvergenceError,
    NotDiagonallyDominantError,
    SingularMatrixError,
    StepFailure,
    UnsupportedCorrelationError,
)
from .grid import Grid1D, Grid2D, TimeGrid, build_grid_1d, build_grid_2d, build_time_grid, check_cfl
from .problem import (
    HJBProblem,
    HJBProblem2D,
    IsaacsProblem,
    controlled_diffusion_problem,
    eikonal_problem,
    eikonal_problem_negative,
)

__version__ = "0.1.0"
