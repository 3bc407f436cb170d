"""Monolithic MIP baseline: pick up to K candidate explanations at once.

One block of variables per candidate slot k: the point v^k, usage flag y^k,
per-instance assignment a^k, per-bit and per-feature change indicators, and a
product linearization tying assignments to changed features.  Kept independent
of the column generation path so the two can be compared honestly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierModel, embed
from .colgen import Infeasible, NotNegative, build_pricing, check_all_negative
from .explanations import (
    GroupExplanation,
    changed_features,
    make_column,
    validate_group_explanation,
)
from .schema import InstanceSet
from .solver import MipModel, SolveLimits, SolverParams, VarKind, solve_mip


@dataclass
class BaselineConfig:
    k_max: int                      # number of candidate slots (K)
    t_max: int                      # per-explanation changed-feature budget
    time_limit: float | None = None
    # conflict strengthening: "exact" probes pair shareability with small MIPs,
    # "pairs" uses the distance test only, "none" disables, "auto" picks by size
    strengthen: str = "auto"

    def validate(self, instances: InstanceSet) -> None:
        if not 1 <= self.k_max <= len(instances):
            raise ValueError(f"k_max must be in [1, {len(instances)}], got {self.k_max}")
        if not 1 <= self.t_max <= instances.schema.n_features:
            raise ValueError(
                f"t_max must be in [1, {instances.schema.n_features}], got {self.t_max}"
            )
        if self.strengthen not in ("auto", "exact", "pairs", "none"):
            raise ValueError(f"unknown strengthen mode {self.strengthen!r}")


def build_baseline(
    instances: InstanceSet, model: ClassifierModel, cfg: BaselineConfig
) -> MipModel:
    """Assemble the one-shot MIP over K candidate slots.

    The absolute-difference and product-linearization variables (xi, gamma) and
    the per-bit/per-instance indicators (d, a) are declared continuous in
    [0,1]: with the point, usage and feature flags binary they are forced to
    the correct 0/1 values, which keeps the branching space small without
    changing the optimum.  Slot symmetry is broken by ordering the usage flags.
    """
    cfg.validate(instances)
    check_all_negative(instances, model)
    schema = instances.schema
    matrix = instances.matrix()
    n_exp = schema.n_expanded
    n_inst = len(instances)
    K = cfg.k_max

    mip = MipModel("min", name="baseline")
    ys, vs, aas, ffs = [], [], [], []
    for k in range(K):
        y = mip.add_var(f"y{k}", VarKind.BINARY, obj=1.0)
        v = [mip.add_var(f"v{k}_{h}", VarKind.BINARY) for h in range(n_exp)]
        a = [mip.add_var(f"a{k}_{i}", VarKind.CONTINUOUS, 0.0, 1.0) for i in range(n_inst)]
        d = [mip.add_var(f"d{k}_{h}", VarKind.CONTINUOUS, 0.0, 1.0) for h in range(n_exp)]
        f = [mip.add_var(f"f{k}_{l}", VarKind.BINARY) for l in range(schema.n_features)]
        ys.append(y)
        vs.append(v)
        aas.append(a)
        ffs.append(f)

        embed(model, mip, v, prefix=f"clf{k}")

        for i in range(n_inst):
            for h in range(n_exp):
                xi = mip.add_var(f"xi{k}_{i}_{h}", VarKind.CONTINUOUS, 0.0, 1.0)
                g = mip.add_var(f"g{k}_{i}_{h}", VarKind.CONTINUOUS, 0.0, 1.0)
                v0 = float(matrix[i, h])
                # the absolute difference |v0 - v| is affine in v for 0/1 data;
                # pinning xi to it keeps the model's projection identical and
                # removes a huge degenerate optimal face the LP would wander in
                if v0 == 1.0:
                    mip.add_constr({xi: 1.0, v[h]: 1.0}, "==", 1.0)
                else:
                    mip.add_constr({xi: 1.0, v[h]: -1.0}, "==", 0.0)
                mip.add_constr({d[h]: 1.0, g: -1.0}, ">=", 0.0)
                mip.add_constr({g: 1.0, xi: -1.0}, "<=", 0.0)
                mip.add_constr({g: 1.0, a[i]: -1.0}, "<=", 0.0)
                mip.add_constr({g: 1.0, xi: -1.0, a[i]: -1.0}, ">=", -1.0)

        for l, block in enumerate(schema.expanded_index):
            coeffs = {f[l]: float(len(block))}
            for h in block:
                coeffs[d[h]] = -1.0
            mip.add_constr(coeffs, ">=", 0.0)
        budget = {f[l]: 1.0 for l in range(schema.n_features)}
        budget[y] = -float(cfg.t_max)
        mip.add_constr(budget, "<=", 0.0)
        for l in sorted(schema.onehot_set):
            mip.add_constr({v[h]: 1.0 for h in schema.expanded_index[l]}, "==", 1.0)
        for i in range(n_inst):
            mip.add_constr({a[i]: 1.0, y: -1.0}, "<=", 0.0)

    for i in range(n_inst):
        mip.add_constr({aas[k][i]: 1.0 for k in range(K)}, ">=", 1.0, name=f"cover{i}")
    for k in range(K - 1):
        mip.add_constr({ys[k]: 1.0, ys[k + 1]: -1.0}, ">=", 0.0, name=f"sym{k}")

    # conflict cliques: instances proven unable to share any column admit at
    # most one member per slot.  Integrally redundant, but lifts the LP bound
    # to the clique number, which is what makes the one-shot MIP provable.
    cliques, bad_triples = _conflict_structure(instances, model, cfg)
    for clique in cliques:
        for k in range(K):
            coeffs = {aas[k][i]: 1.0 for i in clique}
            coeffs[ys[k]] = -1.0
            mip.add_constr(coeffs, "<=", 0.0)
    for triple in bad_triples:
        for k in range(K):
            coeffs = {aas[k][i]: 1.0 for i in triple}
            coeffs[ys[k]] = -2.0
            mip.add_constr(coeffs, "<=", 0.0)

    # lexicographic slot ordering (slots sorted by lowest covered instance, so
    # instance i never uses a slot past i): a strong symmetry break when the
    # assignment is mostly forced by conflicts, counterproductive when loose
    max_clique = max((len(c) for c in cliques), default=0)
    if max_clique >= max(2, int(0.6 * n_inst)):
        for k in range(K):
            for i in range(min(k, n_inst)):
                mip.fix_var(aas[k][i], 0.0)

    mip.set_group("y", ys)
    for k in range(K):
        mip.set_group(f"v{k}", vs[k])
        mip.set_group(f"a{k}", aas[k])
        mip.set_group(f"f{k}", ffs[k])
    return mip


def _conflict_structure(
    instances: InstanceSet, model: ClassifierModel, cfg: BaselineConfig
) -> tuple[list[list[int]], list[tuple[int, int, int]]]:
    """Greedy maximal cliques in the cannot-share graph, plus bad triples.

    Two instances conflict when no single column can cover both: a shared
    column's feature set must contain both difference sets, so instances more
    than t_max features apart always conflict; in exact mode, pairs within the
    distance budget are additionally probed with a small feasibility MIP that
    pins both selections (timeouts count as shareable, which stays valid).
    Pairwise-shareable triples are probed the same way; a proven-unshareable
    triple yields an at-most-two-per-slot row.
    """
    mode = cfg.strengthen
    if mode == "auto":
        mode = "exact" if len(instances) <= 24 else "pairs"
    if mode == "none":
        return [], []
    schema = instances.schema
    matrix = instances.matrix()
    n = len(instances)
    feat_of = schema.feature_of_column()
    conflict = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            diff_cols = np.flatnonzero(matrix[i] != matrix[j])
            apart = len({int(feat_of[h]) for h in diff_cols}) > cfg.t_max
            if not apart and mode == "exact":
                probe = build_pricing(
                    instances,
                    model,
                    cfg.t_max,
                    np.zeros(n),
                    fix_assignment={i: 1, j: 1},
                    objective="sparsity",
                )
                psol = solve_mip(probe, SolveLimits(time_limit=5.0))
                apart = psol.status in ("infeasible", "cutoff")
            conflict[i, j] = conflict[j, i] = apart
    cliques: list[list[int]] = []
    seen: set[tuple[int, ...]] = set()
    for start in range(n):
        clique = [start]
        for j in range(n):
            if j != start and all(conflict[j, c] for c in clique):
                clique.append(j)
        key = tuple(sorted(clique))
        if len(clique) >= 2 and key not in seen:
            seen.add(key)
            cliques.append(sorted(clique))

    bad_triples: list[tuple[int, int, int]] = []
    if mode == "exact" and n <= 12:
        budget = 300
        for i in range(n):
            for j in range(i + 1, n):
                if conflict[i, j]:
                    continue
                for l in range(j + 1, n):
                    if conflict[i, l] or conflict[j, l] or budget <= 0:
                        continue
                    budget -= 1
                    probe = build_pricing(
                        instances,
                        model,
                        cfg.t_max,
                        np.zeros(n),
                        fix_assignment={i: 1, j: 1, l: 1},
                        objective="sparsity",
                    )
                    psol = solve_mip(probe, SolveLimits(time_limit=5.0))
                    if psol.status in ("infeasible", "cutoff"):
                        bad_triples.append((i, j, l))
    return cliques, bad_triples


def solve_baseline(
    instances: InstanceSet,
    model: ClassifierModel,
    cfg: BaselineConfig,
    params: SolverParams | None = None,
) -> GroupExplanation:
    """Build, solve and extract a validated explanation set from the one-shot MIP."""
    mip = build_baseline(instances, model, cfg)
    sol = solve_mip(
        mip,
        SolveLimits(time_limit=cfg.time_limit),
        params,
    )
    if sol.status == "infeasible":
        _diagnose_infeasible(instances, model, cfg, params)
    if not sol.has_incumbent:
        raise Infeasible(
            [],
            f"baseline found no cover within its limits (status {sol.status}, "
            f"bound {sol.bound})",
        )

    schema = instances.schema
    matrix = instances.matrix()
    used = [k for k in range(cfg.k_max) if mip.group_values("y", sol.x)[k] > 0.5]
    raw: list[tuple[np.ndarray, set[int]]] = []
    for k in used:
        vals = np.round(mip.group_values(f"v{k}", sol.x)).astype(np.int8)
        fset = {
            l
            for l, fv in enumerate(mip.group_values(f"f{k}", sol.x))
            if fv > 0.5
        }
        raw.append((vals, fset))

    # assign each instance to the first used slot whose declared changes cover it
    assignment_slot: dict[int, int] = {}
    for i in range(len(instances)):
        pick = None
        for j, (vals, fset) in enumerate(raw):
            if changed_features(schema, matrix[i], vals) <= fset:
                pick = j
                break
        if pick is None:
            raise Infeasible(
                [instances.ids()[i]],
                "incumbent does not cover an instance within its declared features",
            )
        assignment_slot[i] = pick

    columns = []
    id_map: dict[int, int] = {}
    for j, (vals, fset) in enumerate(raw):
        members = [i for i, p in assignment_slot.items() if p == j]
        if not members:
            continue
        union: set[int] = set()
        for i in members:
            union |= changed_features(schema, matrix[i], vals)
        id_map[j] = len(columns)
        columns.append(make_column(schema, matrix, vals, union))

    assignment = {
        instances.ids()[i]: id_map[j] for i, j in assignment_slot.items()
    }
    result = GroupExplanation(
        columns=columns,
        assignment=assignment,
        objective=len(columns),
        bound=float(sol.bound) if math.isfinite(sol.bound) else 0.0,
        status="optimal" if sol.status == "optimal" else "feasible",
    )
    validate_group_explanation(result, instances, model, cfg.t_max)
    return result


def _diagnose_infeasible(
    instances: InstanceSet,
    model: ClassifierModel,
    cfg: BaselineConfig,
    params: SolverParams | None,
) -> None:
    """Name the instances that admit no counterfactual within the budget."""
    zeros = np.zeros(len(instances))
    bad = []
    for i in range(len(instances)):
        probe = build_pricing(
            instances, model, cfg.t_max, zeros, fix_assignment={i: 1}, objective="sparsity"
        )
        psol = solve_mip(probe, SolveLimits(time_limit=30.0), params)
        if psol.status in ("infeasible", "cutoff"):
            bad.append(instances.ids()[i])
    if bad:
        raise Infeasible(bad)
    raise Infeasible(
        [], f"every instance is individually coverable but no cover with K={cfg.k_max} exists"
    )
