"""Columns (candidate group explanations) and validated explanation bundles.

A column is a positive point ``values`` of the expanded binary space together
with the set of original features it is allowed to change.  Its coverage over
an instance set is always *recomputed* from that pair: an instance is covered
iff it differs from the column's values only inside the allowed features'
expanded blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierModel, is_positive, predict_proba
from .schema import FeatureSchema, InstanceSet


class ValidationError(AssertionError):
    """A returned explanation violates coverage, positivity or sparsity."""


@dataclass(frozen=True)
class Column:
    values: tuple[int, ...]
    feature_set: tuple[int, ...]          # sorted original-feature ids, the changed set
    coverage: tuple[int, ...]             # 0/1 over the instance set, recomputed

    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int8)

    def coverage_array(self) -> np.ndarray:
        return np.asarray(self.coverage, dtype=bool)

    def key(self) -> tuple:
        return (self.values, self.feature_set)


def changed_features(schema: FeatureSchema, point_a: np.ndarray, point_b: np.ndarray) -> set[int]:
    """Original features in which two expanded points differ."""
    diff = np.flatnonzero(np.asarray(point_a) != np.asarray(point_b))
    feat_of = schema.feature_of_column()
    return {int(feat_of[h]) for h in diff}


def coverage_vector(
    schema: FeatureSchema,
    matrix: np.ndarray,
    values: np.ndarray,
    feature_set: tuple[int, ...] | frozenset[int],
) -> np.ndarray:
    """Boolean coverage of each matrix row by (values, feature_set)."""
    allowed = schema.columns_for(feature_set)
    diff = matrix != np.asarray(values)[None, :]
    return ~(diff & ~allowed[None, :]).any(axis=1)


def make_column(
    schema: FeatureSchema,
    matrix: np.ndarray,
    values: np.ndarray,
    feature_set,
) -> Column:
    feats = tuple(sorted(int(f) for f in feature_set))
    cov = coverage_vector(schema, matrix, values, feats)
    return Column(
        tuple(int(v) for v in np.asarray(values)),
        feats,
        tuple(int(c) for c in cov),
    )


@dataclass
class GroupExplanation:
    """A set of columns whose union of coverage is the whole instance set."""

    columns: list[Column]
    assignment: dict[str, int]  # instance source_id -> index into columns
    objective: int
    bound: float
    status: str                 # "optimal" | "feasible"

    def heatmap_matrix(self) -> np.ndarray:
        return np.stack([c.values_array() for c in self.columns])


def validate_group_explanation(
    result: GroupExplanation,
    instances: InstanceSet,
    model: ClassifierModel,
    t_max: int,
) -> None:
    """Independent re-check of every claimed property; raises on any violation.

    Checks, from raw primitives (not the stored coverage): every instance is
    assigned to a column that actually covers it, every column is classified
    positive at the threshold, is schema-valid, and changes at most ``t_max``
    original features even when unioned over its assigned instances.
    """
    schema = instances.schema
    matrix = instances.matrix()
    ids = instances.ids()
    if set(result.assignment) != set(ids):
        raise ValidationError("assignment does not cover exactly the instance set")

    assigned: dict[int, list[int]] = {k: [] for k in range(len(result.columns))}
    for row, sid in enumerate(ids):
        k = result.assignment[sid]
        if not 0 <= k < len(result.columns):
            raise ValidationError(f"instance {sid!r} assigned to missing column {k}")
        assigned[k].append(row)

    for k, col in enumerate(result.columns):
        vals = col.values_array()
        schema.validate_values(vals)
        if not is_positive(model, vals):
            raise ValidationError(
                f"column {k} classified negative (p={predict_proba(model, vals):.4f})"
            )
        if len(col.feature_set) > t_max:
            raise ValidationError(f"column {k} declares {len(col.feature_set)} > {t_max} features")
        union: set[int] = set()
        for row in assigned[k]:
            diffs = changed_features(schema, matrix[row], vals)
            if not diffs <= set(col.feature_set):
                raise ValidationError(
                    f"instance {ids[row]!r} differs from column {k} outside its feature set"
                )
            union |= diffs
        if len(union) > t_max:
            raise ValidationError(f"column {k} group changes {len(union)} > {t_max} features")
        recomputed = coverage_vector(schema, matrix, vals, col.feature_set)
        if tuple(int(c) for c in recomputed) != col.coverage:
            raise ValidationError(f"column {k} coverage is inconsistent with (values, features)")

    if result.objective != len(result.columns):
        raise ValidationError("objective does not equal the number of columns used")
