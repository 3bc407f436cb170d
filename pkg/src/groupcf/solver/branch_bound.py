"""LP solve entry point and branch-and-bound over binary variables.

Node relaxations are warm-started with the dual simplex from whatever basis the
engine currently holds (always dual-feasible, since reduced costs do not depend
on bounds).  Search is depth-first on the most-fractional binary, lowest id on
ties, with a jump to the best-bound open node every 1000 processed nodes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .model import (
    LpSolution,
    MipModel,
    MipSolution,
    NumericalBreakdown,
    SolveLimits,
    SolverParams,
)
from .simplex import DualStall, SimplexEngine, TimeLimitReached


def solve_lp(
    model: MipModel,
    params: SolverParams | None = None,
    time_limit: float | None = None,
) -> LpSolution:
    """Solve the LP relaxation (integrality dropped) to proven optimality.

    The returned duals/reduced costs are validated against strong duality and
    primal feasibility; a violation raises NumericalBreakdown rather than
    returning a silently wrong solution.
    """
    params = params or SolverParams()
    engine = SimplexEngine(model, params)
    deadline = None if time_limit is None else time.monotonic() + time_limit
    try:
        status = engine.solve_primal(deadline)
    except TimeLimitReached:
        raise NumericalBreakdown("LP solve hit the time limit") from None
    if status != "optimal":
        return LpSolution(status, iterations=engine.iterations)
    sol = LpSolution(
        "optimal",
        x=engine.struct_x(),
        duals=engine.row_duals(),
        reduced_costs=engine.struct_reduced_costs(),
        objective=engine.objective_value(),
        iterations=engine.iterations,
    )
    _validate_lp(model, sol, params)
    return sol


def _validate_lp(model: MipModel, sol: LpSolution, params: SolverParams) -> None:
    x = sol.x
    scale = 1.0 + abs(sol.objective)
    for i, row in enumerate(model.constraints):
        lhs = float(x[row.cols] @ row.vals)
        resid = lhs - row.rhs
        ok = (
            resid <= params.tol_feas * (1.0 + abs(row.rhs))
            if row.sense == "<="
            else resid >= -params.tol_feas * (1.0 + abs(row.rhs))
            if row.sense == ">="
            else abs(resid) <= params.tol_feas * (1.0 + abs(row.rhs))
        )
        if not ok:
            raise NumericalBreakdown(
                f"LP primal infeasibility {resid:.2e} on row {i} ({row.name!r})"
            )
    gap = abs(sol.objective - sol.dual_objective(model))
    if gap > params.tol_duality * scale:
        raise NumericalBreakdown(f"LP duality gap {gap:.2e} exceeds tolerance")


@dataclass
class _Node:
    lo: np.ndarray  # bounds over binary vars only
    up: np.ndarray
    bound: float    # parent LP value in internal (min) sense


def solve_mip(
    model: MipModel,
    limits: SolveLimits | None = None,
    params: SolverParams | None = None,
) -> MipSolution:
    """Branch and bound over the model's binary variables.

    Within the limits the incumbent and a valid bound are returned; without
    limits the search is exhaustive.  The pool collects every improving
    incumbent plus any other integral node solutions encountered, deduplicated
    on the rounded binary part.
    """
    limits = limits or SolveLimits()
    params = params or SolverParams()
    minimize = model.sense == "min"
    sgn = 1.0 if minimize else -1.0

    engine = SimplexEngine(model, params)
    deadline = (
        None if limits.time_limit is None else time.monotonic() + limits.time_limit
    )
    bin_ids = np.array(model.binary_ids(), dtype=np.int64)
    base_lo = np.array([model.variables[j].lb for j in bin_ids])
    base_up = np.array([model.variables[j].ub for j in bin_ids])
    struct_lo = np.array([v.lb for v in model.variables])
    struct_up = np.array([v.ub for v in model.variables])

    c = model.objective_vector()
    binset = set(bin_ids.tolist())
    integral_obj = bool(bin_ids.size) and all(
        float(c[j]).is_integer() for j in bin_ids
    ) and not any(
        c[j] != 0.0 for j in range(model.n_vars) if j not in binset
    )

    cutoff_min = math.inf if limits.cutoff is None else sgn * limits.cutoff

    incumbent: np.ndarray | None = None
    incumbent_obj = math.inf  # internal min sense
    pool: dict[tuple[int, ...], tuple[float, np.ndarray]] = {}
    nodes_done = 0
    open_nodes: list[_Node] = [_Node(base_lo.copy(), base_up.copy(), -math.inf)]
    hit_limit = False

    def round_bound(val: float) -> float:
        if integral_obj and math.isfinite(val):
            return math.ceil(val - params.tol_int)
        return val

    def prune_level() -> float:
        return min(incumbent_obj, cutoff_min)

    def consider(x: np.ndarray, obj_min: float) -> None:
        nonlocal incumbent, incumbent_obj
        key = tuple(int(round(v)) for v in x[bin_ids])
        if key not in pool:
            if len(pool) >= limits.pool_size:
                worst = max(pool, key=lambda k: pool[k][0])
                if pool[worst][0] > obj_min:
                    del pool[worst]
                    pool[key] = (obj_min, x.copy())
            else:
                pool[key] = (obj_min, x.copy())
        if obj_min < min(incumbent_obj, cutoff_min) - 1e-9:
            incumbent = x.copy()
            incumbent_obj = obj_min

    def solve_with_bounds(lo_bin: np.ndarray, up_bin: np.ndarray) -> tuple[str, float, np.ndarray | None]:
        lo = struct_lo.copy()
        up = struct_up.copy()
        lo[bin_ids] = lo_bin
        up[bin_ids] = up_bin
        if bin_ids.size:
            changed = int(
                np.count_nonzero(engine.lo[bin_ids] != lo_bin)
                + np.count_nonzero(engine.up[bin_ids] != up_bin)
            )
        else:
            changed = 0
        engine.set_struct_bounds(lo, up)
        try:
            # far jumps rarely warm-start well on degenerate models
            if changed > 8:
                status = engine.solve_primal(deadline)
            else:
                status = engine.warm_solve(deadline)
        except DualStall:
            status = engine.solve_primal(deadline)
        except NumericalBreakdown:
            status = engine.solve_primal(deadline)
        if status == "unbounded":
            raise NumericalBreakdown("MIP relaxation unbounded")
        if status != "optimal":
            return status, math.inf, None
        x = engine.struct_x()
        obj = sgn * engine.objective_value()
        return "optimal", obj, x

    def solve_node(node: _Node) -> tuple[str, float, np.ndarray | None]:
        return solve_with_bounds(node.lo, node.up)

    def dive(node: _Node, x0: np.ndarray) -> None:
        """Greedy rounding dive from a node's LP point to hunt an incumbent.

        Repeatedly pins the most nearly-integral fractional binary to its
        nearest value (trying the other side once on failure) and re-solves.
        Purely a primal heuristic: anything found goes through ``consider``;
        the search tree itself is untouched.
        """
        lo = node.lo.copy()
        up = node.up.copy()
        x = x0
        for _ in range(2 * bin_ids.size + 4):
            if deadline is not None and time.monotonic() > deadline:
                return
            frac = np.abs(x[bin_ids] - np.round(x[bin_ids]))
            free = (lo < up) & (frac > params.tol_int)
            if not free.any():
                if frac.max() <= params.tol_int:
                    consider(x, sgn * float(c @ x))
                return
            cand = np.flatnonzero(free)
            j = int(cand[np.argmin(frac[cand])])
            val = float(np.round(x[bin_ids[j]]))
            for attempt, v in enumerate((val, 1.0 - val)):
                lo2, up2 = lo.copy(), up.copy()
                lo2[j] = up2[j] = v
                status, obj, x2 = solve_with_bounds(lo2, up2)
                if status == "optimal" and obj < prune_level() - 1e-9:
                    lo, up, x = lo2, up2, x2
                    break
            else:
                return
        return

    try:
        while open_nodes:
            if limits.node_limit is not None and nodes_done >= limits.node_limit:
                hit_limit = True
                break
            if deadline is not None and time.monotonic() > deadline:
                hit_limit = True
                break
            if nodes_done > 0 and nodes_done % 1000 == 0:
                # best-bound restart: jump to the most promising open node
                pick = min(range(len(open_nodes)), key=lambda i: open_nodes[i].bound)
                node = open_nodes.pop(pick)
            else:
                node = open_nodes.pop()
            nodes_done += 1
            if round_bound(node.bound) >= prune_level() - 1e-9:
                continue
            status, obj, x = solve_node(node)
            if status != "optimal":
                continue
            node_bound = round_bound(obj)
            if node_bound >= prune_level() - 1e-9:
                continue
            frac = np.abs(x[bin_ids] - np.round(x[bin_ids]))
            if bin_ids.size == 0 or frac.max() <= params.tol_int:
                consider(x, obj)
                continue
            if nodes_done == 1 or (incumbent is None and nodes_done % 40 == 0):
                dive(node, x)
            # most fractional binary, lowest id on ties
            score = 0.5 - np.abs(x[bin_ids] - np.floor(x[bin_ids]) - 0.5)
            score[frac <= params.tol_int] = -1.0
            j = int(score.argmax())
            val = x[bin_ids[j]]
            near_one = val >= 0.5
            lo0, up0 = node.lo.copy(), node.up.copy()
            up0[j] = 0.0
            lo1, up1 = node.lo.copy(), node.up.copy()
            lo1[j] = 1.0
            far = _Node(lo0, up0, obj) if near_one else _Node(lo1, up1, obj)
            near = _Node(lo1, up1, obj) if near_one else _Node(lo0, up0, obj)
            open_nodes.append(far)
            open_nodes.append(near)  # popped first
    except TimeLimitReached:
        hit_limit = True

    pool_out = sorted(
        ((sgn * o, x) for o, x in pool.values()), key=lambda t: sgn * t[0]
    )
    if incumbent is not None:
        if hit_limit:
            open_bounds = [round_bound(n.bound) for n in open_nodes]
            bound_min = min([incumbent_obj] + open_bounds) if open_bounds else incumbent_obj
            return MipSolution(
                "feasible", incumbent, sgn * incumbent_obj, sgn * bound_min, pool_out, nodes_done
            )
        return MipSolution(
            "optimal", incumbent, sgn * incumbent_obj, sgn * incumbent_obj, pool_out, nodes_done
        )
    if hit_limit:
        open_bounds = [round_bound(n.bound) for n in open_nodes]
        bound_min = min(open_bounds) if open_bounds else cutoff_min
        return MipSolution("timeout", None, math.nan, sgn * bound_min, pool_out, nodes_done)
    if limits.cutoff is not None:
        # exhausted: nothing strictly better than the cutoff exists
        return MipSolution("cutoff", None, math.nan, limits.cutoff, pool_out, nodes_done)
    return MipSolution("infeasible", None, math.nan, math.nan, pool_out, nodes_done)
