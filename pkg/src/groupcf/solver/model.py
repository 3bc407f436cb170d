"""Model container and solution types for the LP/MIP engine.

Constraints are stored as sparse rows; the simplex core densifies them when a
solve starts.  Models are sealed implicitly by solving: mutate only before the
first solve.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class SolverError(RuntimeError):
    pass


class NumericalBreakdown(SolverError):
    """The LP engine failed to make progress; never silently swallowed."""


class CapacityExceeded(SolverError):
    """Dense working storage for the model would exceed the configured cap."""


class VarKind(enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


LE, GE, EQ = "<=", ">=", "=="
_SENSES = (LE, GE, EQ)


@dataclass
class Variable:
    name: str
    kind: VarKind
    lb: float
    ub: float


@dataclass
class Constraint:
    cols: np.ndarray
    vals: np.ndarray
    sense: str
    rhs: float
    name: str


class MipModel:
    """Linear objective, linear constraints, continuous and binary variables.

    Named variable groups let callers register blocks of variables (for example
    all coverage indicators) and read them back from a solution vector without
    tracking raw ids.
    """

    def __init__(self, sense: str = "min", name: str = "model"):
        if sense not in ("min", "max"):
            raise ValueError(f"objective sense must be min or max, got {sense!r}")
        self.sense = sense
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self.groups: dict[str, list[int]] = {}

    # -- construction ------------------------------------------------------

    def add_var(
        self,
        name: str,
        kind: VarKind = VarKind.CONTINUOUS,
        lb: float = 0.0,
        ub: float = math.inf,
        obj: float = 0.0,
    ) -> int:
        if kind is VarKind.BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ValueError(f"variable {name!r}: lb {lb} > ub {ub}")
        if math.isnan(lb) or math.isnan(ub):
            raise ValueError(f"variable {name!r}: NaN bound")
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        vid = len(self.variables) - 1
        if obj:
            self.objective[vid] = float(obj)
        return vid

    def add_constr(
        self,
        coeffs: Mapping[int, float] | Iterable[tuple[int, float]],
        sense: str,
        rhs: float,
        name: str = "",
    ) -> int:
        if sense not in _SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        items = list(coeffs.items()) if isinstance(coeffs, Mapping) else list(coeffs)
        cols = np.fromiter((c for c, _ in items), dtype=np.int64, count=len(items))
        vals = np.fromiter((v for _, v in items), dtype=np.float64, count=len(items))
        if len(cols) and (cols.min() < 0 or cols.max() >= len(self.variables)):
            raise ValueError(f"constraint {name!r} references undeclared variable")
        if not np.isfinite(vals).all() or not math.isfinite(rhs):
            raise ValueError(f"constraint {name!r} has non-finite coefficients")
        self.constraints.append(Constraint(cols, vals, sense, float(rhs), name))
        return len(self.constraints) - 1

    def set_objective_coeff(self, var: int, coeff: float) -> None:
        if not math.isfinite(coeff):
            raise ValueError("non-finite objective coefficient")
        if coeff == 0.0:
            self.objective.pop(var, None)
        else:
            self.objective[var] = float(coeff)

    def set_group(self, name: str, ids: Iterable[int]) -> None:
        self.groups[name] = list(ids)

    def fix_var(self, var: int, value: float) -> None:
        self.variables[var].lb = float(value)
        self.variables[var].ub = float(value)

    # -- inspection --------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constrs(self) -> int:
        return len(self.constraints)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for vid, coeff in self.objective.items():
            c[vid] = coeff
        return c

    def binary_ids(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.kind is VarKind.BINARY]

    def group_values(self, name: str, x: np.ndarray) -> np.ndarray:
        return x[self.groups[name]]


@dataclass
class LpSolution:
    """Optimal basis solution of an LP relaxation.

    ``duals`` are shadow prices d(objective)/d(rhs) in the model's own sense:
    for a minimization, >= rows have nonnegative duals and <= rows nonpositive
    ones.  ``reduced_costs`` follow the same sense.
    """

    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float = math.nan
    iterations: int = 0

    def dual_objective(self, model: MipModel) -> float:
        """b'y plus the bound terms of nonbasic variables (general bounded-LP dual)."""
        assert self.status == "optimal" and self.duals is not None
        total = sum(row.rhs * self.duals[i] for i, row in enumerate(model.constraints))
        for j, var in enumerate(model.variables):
            d = self.reduced_costs[j]
            if abs(d) < 1e-12:
                continue
            sense = 1.0 if model.sense == "min" else -1.0
            # at-lower when sense-adjusted reduced cost positive, at-upper when negative
            bound = var.lb if sense * d > 0 else var.ub
            if math.isfinite(bound):
                total += d * bound
        return total


@dataclass
class MipSolution:
    """Incumbent, bound and solution pool of a branch-and-bound run.

    Statuses: ``optimal`` (proved), ``feasible`` (limit hit with incumbent),
    ``infeasible``, ``timeout`` (limit hit with no incumbent), ``cutoff``
    (search exhausted, nothing strictly better than the requested cutoff).
    """

    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    bound: float = math.nan
    pool: list[tuple[float, np.ndarray]] = field(default_factory=list)
    nodes: int = 0

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


@dataclass
class SolveLimits:
    """Resource limits for a MIP solve; time in seconds, cutoff in model sense."""

    time_limit: float | None = None
    node_limit: int | None = None
    pool_size: int = 64
    cutoff: float | None = None


@dataclass
class SolverParams:
    tol_feas: float = 1e-6
    tol_int: float = 1e-6
    tol_duality: float = 1e-6
    pivot_tol: float = 1e-9
    dj_tol: float = 1e-7
    refresh_every: int = 150
    stall_limit: int = 300
    max_iterations: int = 200_000
    max_dense_entries: float = 2.5e8


def write_lp(model: MipModel, path: str) -> None:
    """Dump the model in LP text format (debugging aid for external cross-checks)."""
    def term(vid: int, coeff: float) -> str:
        sign = "+" if coeff >= 0 else "-"
        return f"{sign} {abs(coeff):.12g} x{vid}"

    lines = [f"\\* {model.name} *\\", "Minimize" if model.sense == "min" else "Maximize"]
    obj_terms = " ".join(term(v, c) for v, c in sorted(model.objective.items())) or "0 x0"
    lines.append(f" obj: {obj_terms}")
    lines.append("Subject To")
    for i, row in enumerate(model.constraints):
        body = " ".join(term(int(c), float(v)) for c, v in zip(row.cols, row.vals))
        op = {"<=": "<=", ">=": ">=", "==": "="}[row.sense]
        lines.append(f" c{i}: {body} {op} {row.rhs:.12g}")
    lines.append("Bounds")
    for j, var in enumerate(model.variables):
        lo = f"{var.lb:.12g}" if math.isfinite(var.lb) else "-inf"
        hi = f"{var.ub:.12g}" if math.isfinite(var.ub) else "+inf"
        lines.append(f" {lo} <= x{j} <= {hi}")
    bins = model.binary_ids()
    if bins:
        lines.append("Binary")
        lines.append(" " + " ".join(f"x{j}" for j in bins))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
