"""Column generation for minimum-cardinality collective counterfactuals.

The restricted master problem is a set-cover LP over the generated columns;
its duals price a MIP that searches for a new column whose dual-weighted
coverage exceeds 1.  Extra columns are harvested from the pricing solver's
solution pool, two refinement MIPs are solved per iteration (re-assign with the
point fixed, re-sparsify with the assignment fixed), and priced-out columns
wait in a pool and re-enter when later duals make them attractive.
Terminates when the pricing proves no column prices out; the ceiling of the
final LP value is then a global lower bound.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierModel, embed, is_positive
from .explanations import (
    Column,
    GroupExplanation,
    changed_features,
    coverage_vector,
    make_column,
    validate_group_explanation,
)
from .schema import FeatureSchema, InstanceSet
from .solver import (
    MipModel,
    MipSolution,
    SolveLimits,
    SolverParams,
    VarKind,
    solve_lp,
    solve_mip,
)


class ColgenError(RuntimeError):
    pass


class NotNegative(ValueError):
    def __init__(self, ids: list[str]):
        self.ids = ids
        super().__init__(f"instances classified positive, not explainable: {ids}")


class Infeasible(RuntimeError):
    """Some instances admit no counterfactual within the sparsity budget."""

    def __init__(self, ids: list[str], message: str | None = None):
        self.ids = ids
        super().__init__(message or f"no counterfactual within budget for instances: {ids}")


@dataclass
class ColgenLimits:
    time_limit: float | None = None
    iteration_cap: int = 10_000
    tol_price: float = 1e-6
    pricing_node_limit: int | None = None
    pricing_cutoff: bool = True       # prune pricing nodes that cannot price out
    refine_columns: bool = True
    pool_size: int = 64


@dataclass
class ColgenState:
    instances: InstanceSet
    model: ClassifierModel
    t_max: int
    active: list[Column] = field(default_factory=list)
    pool: list[Column] = field(default_factory=list)
    duals: np.ndarray | None = None
    lp_value: float = math.inf
    iteration: int = 0
    trace: list[dict] = field(default_factory=list)

    def active_keys(self) -> set[tuple]:
        return {c.key() for c in self.active}


@dataclass
class ColgenResult:
    explanation: GroupExplanation
    lp_lower_bound: int
    certified: bool
    converged: bool
    lp_value: float
    iterations: int
    elapsed: float
    trace: list[dict]

    @property
    def objective(self) -> int:
        return self.explanation.objective


def check_all_negative(instances: InstanceSet, model: ClassifierModel) -> None:
    pos = is_positive(model, instances.matrix())
    if pos.any():
        ids = [sid for sid, p in zip(instances.ids(), pos) if p]
        raise NotNegative(ids)


# -- model builders ----------------------------------------------------------


def build_pricing(
    instances: InstanceSet,
    model: ClassifierModel,
    t_max: int,
    duals: np.ndarray,
    fix_values: np.ndarray | None = None,
    fix_assignment: dict[int, int] | None = None,
    objective: str = "duals",
) -> MipModel:
    """Pricing MIP: find the point/feature-set pair maximizing dual-weighted coverage.

    ``fix_values`` pins the candidate point (re-assignment refinement);
    ``fix_assignment`` pins the covered set (re-sparsification refinement and
    per-instance initialization, which also switches ``objective`` to
    ``"sparsity"``: minimize the number of changed features).

    The per-bit difference between instance i and the candidate is the affine
    expression v0*(1-v) + (1-v0)*v, exact for binary data, so the coverage
    linking needs a single row per (instance, bit).  Difference indicators are
    continuous: with the point, feature flags and coverage integral they are
    forced integral anyway.
    """
    schema = instances.schema
    matrix = instances.matrix()
    n_exp = schema.n_expanded
    n_inst = len(instances)
    mip = MipModel("max" if objective == "duals" else "min", name="pricing")

    v = [mip.add_var(f"v{h}", VarKind.BINARY) for h in range(n_exp)]
    z = []
    for i in range(n_inst):
        obj = float(duals[i]) if objective == "duals" else 0.0
        zi = mip.add_var(f"z{i}", VarKind.CONTINUOUS, 0.0, 1.0, obj=obj)
        z.append(zi)
    d = [mip.add_var(f"d{h}", VarKind.CONTINUOUS, 0.0, 1.0) for h in range(n_exp)]
    f = []
    for l in range(schema.n_features):
        obj = 1.0 if objective == "sparsity" else 0.0
        f.append(mip.add_var(f"f{l}", VarKind.BINARY, obj=obj))
    mip.set_group("v", v)
    mip.set_group("z", z)
    mip.set_group("d", d)
    mip.set_group("f", f)

    if fix_values is not None:
        for h in range(n_exp):
            mip.fix_var(v[h], float(fix_values[h]))
    if fix_assignment is not None:
        for i in range(n_inst):
            mip.fix_var(z[i], float(fix_assignment.get(i, 0)))

    embed(model, mip, v)

    for i in range(n_inst):
        if fix_assignment is not None and fix_assignment.get(i, 0) == 0:
            continue  # row is vacuous when the instance cannot be selected
        for h in range(n_exp):
            if matrix[i, h] == 1:
                # difference = 1 - v_h:  d >= (1 - v) + z - 1  ->  d + v - z >= 0
                mip.add_constr({d[h]: 1.0, v[h]: 1.0, z[i]: -1.0}, ">=", 0.0)
            else:
                # difference = v_h:      d >= v + z - 1
                mip.add_constr({d[h]: 1.0, v[h]: -1.0, z[i]: -1.0}, ">=", -1.0)

    for l, block in enumerate(schema.expanded_index):
        coeffs = {f[l]: float(len(block))}
        for h in block:
            coeffs[d[h]] = -1.0
        mip.add_constr(coeffs, ">=", 0.0, name=f"group{l}")
    mip.add_constr({f[l]: 1.0 for l in range(schema.n_features)}, "<=", float(t_max), name="budget")
    for l in sorted(schema.onehot_set):
        mip.add_constr({v[h]: 1.0 for h in schema.expanded_index[l]}, "==", 1.0, name=f"onehot{l}")
    return mip


def build_rmp(state: ColgenState, upper_bounded: bool = True, integral: bool = False) -> MipModel:
    """Restricted master: min #columns s.t. every instance covered.

    The loop solves the LP with the redundant y <= 1 bounds dropped, which
    guarantees the returned duals satisfy the dual constraint of every active
    column; the final integer solve uses binary variables.
    """
    mip = MipModel("min", name="rmp")
    ub = 1.0 if (upper_bounded or integral) else math.inf
    kind = VarKind.BINARY if integral else VarKind.CONTINUOUS
    ys = [mip.add_var(f"y{k}", kind, 0.0, ub, obj=1.0) for k in range(len(state.active))]
    mip.set_group("y", ys)
    covers = np.stack([c.coverage_array() for c in state.active])
    for i in range(len(state.instances)):
        coeffs = {ys[k]: 1.0 for k in range(len(state.active)) if covers[k, i]}
        if not coeffs:
            raise ColgenError(f"no active column covers instance index {i}")
        mip.add_constr(coeffs, ">=", 1.0, name=f"cover{i}")
    return mip


# -- column extraction -------------------------------------------------------


def _column_from_point(
    pricing: MipModel,
    x: np.ndarray,
    instances: InstanceSet,
    t_max: int,
) -> Column | None:
    schema = instances.schema
    matrix = instances.matrix()
    vals = np.round(pricing.group_values("v", x)).astype(np.int8)
    fsel = {l for l, fv in enumerate(pricing.group_values("f", x)) if fv > 0.5}
    zsel = [i for i, zv in enumerate(pricing.group_values("z", x)) if zv > 0.5]
    # trim the declared feature set to features a selected instance differs in
    used: set[int] = set()
    for i in zsel:
        used |= changed_features(schema, matrix[i], vals)
    if len(used) > t_max or not used <= fsel:
        # numerically inconsistent pricing solution; skip rather than mis-add
        return None
    return make_column(schema, matrix, vals, used)


def extract_columns(
    pricing: MipModel,
    solution: MipSolution,
    instances: InstanceSet,
    t_max: int,
    duals: np.ndarray,
    tol_price: float = 1e-6,
) -> list[Column]:
    """Violating columns from the pricing incumbent and its solution pool.

    Coverage is recomputed over the full instance set, so a column may cover
    more than the pricing selected; the violation test uses the recomputed
    coverage (which can only weakly exceed the pricing objective).
    """
    points = [x for _, x in solution.pool]
    if solution.has_incumbent:
        points.append(solution.x)
    out: list[Column] = []
    seen: set[tuple] = set()
    for x in points:
        col = _column_from_point(pricing, x, instances, t_max)
        if col is None or col.key() in seen:
            continue
        seen.add(col.key())
        if float(duals @ col.coverage_array()) > 1.0 + tol_price:
            out.append(col)
    return out


def pool_candidates(
    pricing: MipModel,
    solution: MipSolution,
    instances: InstanceSet,
    t_max: int,
    duals: np.ndarray,
    tol_price: float = 1e-6,
) -> list[Column]:
    """Non-violating columns seen during pricing, kept for later re-pricing."""
    points = [x for _, x in solution.pool]
    if solution.has_incumbent:
        points.append(solution.x)
    out = []
    seen: set[tuple] = set()
    for x in points:
        col = _column_from_point(pricing, x, instances, t_max)
        if col is None or col.key() in seen:
            continue
        seen.add(col.key())
        if float(duals @ col.coverage_array()) <= 1.0 + tol_price:
            out.append(col)
    return out


def refine(
    column: Column,
    duals: np.ndarray,
    instances: InstanceSet,
    model: ClassifierModel,
    t_max: int,
    time_limit: float | None = None,
    params: SolverParams | None = None,
) -> list[Column]:
    """Two auxiliary MIPs around a freshly priced column.

    (a) point fixed, coverage re-optimized against the duals; (b) coverage
    fixed, a sparsest alternative point found.  Both always have the original
    column as a feasible solution.
    """
    schema = instances.schema
    matrix = instances.matrix()
    out: list[Column] = []
    limits = SolveLimits(time_limit=time_limit)

    fixed_v = build_pricing(
        instances, model, t_max, duals, fix_values=column.values_array()
    )
    sol_a = solve_mip(fixed_v, limits)
    if sol_a.has_incumbent:
        col_a = _column_from_point(fixed_v, sol_a.x, instances, t_max)
        if col_a is not None:
            out.append(col_a)

    assignment = {i: int(b) for i, b in enumerate(column.coverage)}
    fixed_z = build_pricing(
        instances, model, t_max, duals, fix_assignment=assignment, objective="sparsity"
    )
    sol_b = solve_mip(fixed_z, limits)
    if sol_b.has_incumbent:
        vals = np.round(fixed_z.group_values("v", sol_b.x)).astype(np.int8)
        used: set[int] = set()
        for i, bit in enumerate(column.coverage):
            if bit:
                used |= changed_features(schema, matrix[i], vals)
        if len(used) <= t_max:
            out.append(make_column(schema, matrix, vals, used))

    dedup: dict[tuple, Column] = {}
    for col in out:
        if col.key() != column.key():
            dedup.setdefault(col.key(), col)
    return list(dedup.values())


# -- initialization ----------------------------------------------------------


def initialize(
    instances: InstanceSet,
    model: ClassifierModel,
    t_max: int,
    deadline: float | None = None,
    params: SolverParams | None = None,
) -> ColgenState:
    """Sparsest per-instance counterfactuals, merged where identical.

    Solves one pricing MIP per instance with that instance's selection pinned
    and the objective switched to minimizing the changed-feature count.
    """
    check_all_negative(instances, model)
    schema = instances.schema
    matrix = instances.matrix()
    zeros = np.zeros(len(instances))
    state = ColgenState(instances, model, t_max)
    seen: dict[tuple, Column] = {}
    bad: list[str] = []
    for i in range(len(instances)):
        tl = None if deadline is None else max(0.1, deadline - time.monotonic())
        mip = build_pricing(
            instances, model, t_max, zeros, fix_assignment={i: 1}, objective="sparsity"
        )
        sol = solve_mip(mip, SolveLimits(time_limit=tl), params)
        if sol.status == "infeasible" or (sol.status == "cutoff"):
            bad.append(instances.ids()[i])
            continue
        if not sol.has_incumbent:
            raise ColgenError(
                f"initialization ran out of budget on instance {instances.ids()[i]!r}"
            )
        vals = np.round(mip.group_values("v", sol.x)).astype(np.int8)
        feats = changed_features(schema, matrix[i], vals)
        col = make_column(schema, matrix, vals, feats)
        seen.setdefault(col.key(), col)
    if bad:
        raise Infeasible(bad)
    state.active = list(seen.values())
    return state


# -- main loop ----------------------------------------------------------------


def run(
    instances: InstanceSet,
    model: ClassifierModel,
    t_max: int,
    limits: ColgenLimits | None = None,
    params: SolverParams | None = None,
) -> ColgenResult:
    """Full column generation: init, price, refine, pool, stop, integer solve."""
    limits = limits or ColgenLimits()
    start = time.monotonic()
    deadline = None if limits.time_limit is None else start + limits.time_limit
    tol = limits.tol_price

    state = initialize(instances, model, t_max, deadline, params)
    duals = np.zeros(len(instances))
    converged = False
    out_of_budget = False

    for iteration in range(1, limits.iteration_cap + 1):
        state.iteration = iteration
        lp = solve_lp(build_rmp(state, upper_bounded=False), params)
        if lp.status != "optimal":
            raise ColgenError(f"RMP LP ended with status {lp.status}")
        if lp.objective > state.lp_value + 1e-7:
            raise ColgenError(
                f"RMP LP value increased: {state.lp_value} -> {lp.objective}"
            )
        state.lp_value = lp.objective
        duals = lp.duals.copy()
        state.duals = duals

        record = {
            "iteration": state.iteration,
            "lp_value": round(float(lp.objective), 9),
            "active_columns": len(state.active),
            "pool_size": len(state.pool),
            "elapsed": round(time.monotonic() - start, 3),
        }

        # cheap pool re-check before paying for a pricing MIP
        activated = []
        remaining = []
        active_keys = state.active_keys()
        for col in state.pool:
            if float(duals @ col.coverage_array()) > 1.0 + tol and col.key() not in active_keys:
                activated.append(col)
                active_keys.add(col.key())
            else:
                remaining.append(col)
        if activated:
            state.active.extend(activated)
            state.pool = remaining
            record["columns_added"] = len(activated)
            record["source"] = "pool"
            state.trace.append(record)
            continue

        if deadline is not None and time.monotonic() > deadline:
            out_of_budget = True
            state.trace.append({**record, "stop": "time_limit"})
            break

        tl = None if deadline is None else max(0.1, deadline - time.monotonic())
        pricing = build_pricing(instances, model, t_max, duals)
        cutoff = 1.0 + tol if limits.pricing_cutoff else None
        psol = solve_mip(
            pricing,
            SolveLimits(
                time_limit=tl,
                node_limit=limits.pricing_node_limit,
                pool_size=limits.pool_size,
                cutoff=cutoff,
            ),
            params,
        )
        record["pricing_status"] = psol.status
        record["pricing_value"] = (
            round(float(psol.objective), 9) if psol.has_incumbent else None
        )

        if psol.status in ("optimal", "cutoff", "infeasible") and (
            not psol.has_incumbent or psol.objective <= 1.0 + tol
        ):
            converged = True
            state.trace.append({**record, "stop": "priced_out"})
            break
        if not psol.has_incumbent:
            out_of_budget = True  # timed out before proving or finding anything
            state.trace.append({**record, "stop": "pricing_timeout"})
            break

        new_cols = extract_columns(pricing, psol, instances, t_max, duals, tol)
        if limits.refine_columns and new_cols:
            rl = None if deadline is None else max(0.1, deadline - time.monotonic())
            for col in refine(new_cols[0], duals, instances, model, t_max, rl, params):
                if float(duals @ col.coverage_array()) > 1.0 + tol:
                    new_cols.append(col)
                else:
                    state.pool.append(col)
        for col in pool_candidates(pricing, psol, instances, t_max, duals, tol):
            state.pool.append(col)

        added = 0
        for col in new_cols:
            if col.key() not in active_keys:
                state.active.append(col)
                active_keys.add(col.key())
                added += 1
        record["columns_added"] = added
        state.trace.append(record)
        if added == 0:
            if psol.status == "optimal":
                raise ColgenError(
                    "pricing proved a violating column exists but extraction "
                    f"added none (value={psol.objective})"
                )
            out_of_budget = True  # truncated pricing found nothing usable
            break
        if psol.status == "feasible" and deadline is not None and time.monotonic() > deadline:
            out_of_budget = True  # pricing truncated by the deadline itself
            break
    else:
        out_of_budget = True

    explanation = _integer_solve(state, deadline, params)
    lp_lb = int(math.ceil(state.lp_value - 1e-6))
    certified = converged and not out_of_budget and explanation.objective == lp_lb
    validate_group_explanation(explanation, instances, model, t_max)
    return ColgenResult(
        explanation=explanation,
        lp_lower_bound=lp_lb,
        certified=certified,
        converged=converged and not out_of_budget,
        lp_value=state.lp_value,
        iterations=state.iteration,
        elapsed=time.monotonic() - start,
        trace=state.trace,
    )


def _integer_solve(
    state: ColgenState, deadline: float | None, params: SolverParams | None
) -> GroupExplanation:
    tl = None if deadline is None else max(2.0, deadline - time.monotonic())
    rmp = build_rmp(state, integral=True)
    sol = solve_mip(rmp, SolveLimits(time_limit=tl), params)
    if not sol.has_incumbent:
        raise ColgenError("final master integer solve produced no incumbent")
    chosen = [k for k, yv in enumerate(rmp.group_values("y", sol.x)) if yv > 0.5]
    columns = [state.active[k] for k in chosen]
    assignment: dict[str, int] = {}
    used: set[int] = set()
    for i, sid in enumerate(state.instances.ids()):
        pick = next(j for j, col in enumerate(columns) if col.coverage[i])
        assignment[sid] = pick
        used.add(pick)
    if len(used) < len(columns):  # drop columns nobody was assigned to
        keep = sorted(used)
        remap = {old: new for new, old in enumerate(keep)}
        columns = [columns[k] for k in keep]
        assignment = {sid: remap[k] for sid, k in assignment.items()}
    return GroupExplanation(
        columns=columns,
        assignment=assignment,
        objective=len(columns),
        bound=float(sol.bound),
        status="optimal" if sol.status == "optimal" else "feasible",
    )
