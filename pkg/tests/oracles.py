"""Independent brute-force oracles used by the test suite.

These deliberately avoid the production solver and column generation code:
columns are enumerated exhaustively over all schema-valid points and feature
subsets, and minimum covers are found by depth-first search over coverage
sets.  Only usable at fixture scale (a dozen expanded bits, a handful of
instances).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from groupcf.classifier import ClassifierModel, is_positive
from groupcf.schema import FeatureSchema, InstanceSet


def valid_points(schema: FeatureSchema) -> np.ndarray:
    """All 0/1 vectors of the expanded space satisfying the one-hot blocks."""
    choices = []
    for f, block in enumerate(schema.expanded_index):
        if f in schema.onehot_set:
            opts = np.eye(len(block), dtype=np.int8)
        else:
            opts = np.array([[0], [1]], dtype=np.int8)
        choices.append(opts)
    rows = []
    for combo in itertools.product(*choices):
        rows.append(np.concatenate(combo))
    return np.stack(rows)


def positive_points(schema: FeatureSchema, model: ClassifierModel) -> np.ndarray:
    pts = valid_points(schema)
    return pts[np.asarray(is_positive(model, pts))]


def feature_subsets(n_features: int, t_max: int):
    for size in range(t_max + 1):
        yield from itertools.combinations(range(n_features), size)


@dataclass(frozen=True)
class OracleColumn:
    values: tuple[int, ...]
    feature_set: tuple[int, ...]
    coverage: tuple[int, ...]


def enumerate_columns(
    instances: InstanceSet, model: ClassifierModel, t_max: int
) -> list[OracleColumn]:
    """Every (positive point, feature subset) pair with its exact coverage."""
    schema = instances.schema
    matrix = instances.matrix()
    feat_of = schema.feature_of_column()
    pts = positive_points(schema, model)
    out = []
    for vals in pts:
        diff = matrix != vals[None, :]
        diff_feats = [frozenset(int(feat_of[h]) for h in np.flatnonzero(row)) for row in diff]
        for subset in feature_subsets(schema.n_features, t_max):
            sset = set(subset)
            cov = tuple(int(df <= sset) for df in diff_feats)
            out.append(OracleColumn(tuple(int(x) for x in vals), tuple(subset), cov))
    return out


def best_pricing_value(
    instances: InstanceSet, model: ClassifierModel, t_max: int, duals: np.ndarray
) -> float:
    """Exhaustive optimum of the pricing problem: max dual-weighted coverage."""
    best = -np.inf
    w = np.asarray(duals, dtype=float)
    for col in enumerate_columns(instances, model, t_max):
        val = float(w @ np.asarray(col.coverage))
        if val > best:
            best = val
    return best


def sparsest_single(
    instances: InstanceSet, model: ClassifierModel, t_max: int, index: int
) -> int | None:
    """Minimum changed-feature count for one instance, or None if impossible."""
    best = None
    for col in enumerate_columns(instances, model, t_max):
        if col.coverage[index]:
            k = len(col.feature_set)
            if best is None or k < best:
                best = k
    return best


def min_cover_size(coverages: list[tuple[int, ...]], n_items: int) -> int | None:
    """Exact minimum number of coverage sets covering all items (DFS, memo-free).

    Deduplicates and removes dominated sets, then branches on the uncovered
    item with the fewest candidate sets.
    """
    masks = set()
    for cov in coverages:
        mask = 0
        for i, bit in enumerate(cov):
            if bit:
                mask |= 1 << i
        masks.add(mask)
    masks.discard(0)
    masks = [m for m in masks if not any(m != o and m & o == m for o in masks)]
    full = (1 << n_items) - 1
    if not masks:
        return None
    reach = 0
    for m in masks:
        reach |= m
    if reach != full:
        return None

    best: list[int | None] = [None]

    def dfs(covered: int, used: int) -> None:
        if best[0] is not None and used >= best[0]:
            return
        if covered == full:
            best[0] = used
            return
        missing = next(i for i in range(n_items) if not covered >> i & 1)
        for m in masks:
            if m >> missing & 1:
                dfs(covered | m, used + 1)

    dfs(0, 0)
    return best[0]


def exhaustive_group_optimum(
    instances: InstanceSet, model: ClassifierModel, t_max: int
) -> int | None:
    """Exact minimum number of explanations covering all instances."""
    cols = enumerate_columns(instances, model, t_max)
    return min_cover_size([c.coverage for c in cols], len(instances))
