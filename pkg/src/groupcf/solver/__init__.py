"""Self-contained LP/MIP engine: dense revised simplex plus branch and bound."""

from .branch_bound import solve_lp, solve_mip
from .model import (
    CapacityExceeded,
    LpSolution,
    MipModel,
    MipSolution,
    NumericalBreakdown,
    SolveLimits,
    SolverError,
    SolverParams,
    VarKind,
    write_lp,
)

__all__ = [
    "CapacityExceeded",
    "LpSolution",
    "MipModel",
    "MipSolution",
    "NumericalBreakdown",
    "SolveLimits",
    "SolverError",
    "SolverParams",
    "VarKind",
    "solve_lp",
    "solve_mip",
    "write_lp",
]
