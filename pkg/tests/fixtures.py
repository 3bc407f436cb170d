"""Deterministic random fixture factory shared by the test suite.

A fixture is a small schema, a random classifier (LR or 2-layer ReLU net with
its output bias centered so both classes occur), and a set of distinct
negative instances each of which admits at least one counterfactual within the
sparsity budget.  Everything is seeded; the acceptance suite pins the seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from groupcf.classifier import ClassifierModel, ReluLayer, is_positive
from groupcf.schema import BinaryInstance, FeatureSchema, InstanceSet, build_schema

from oracles import valid_points


@dataclass
class Fixture:
    name: str
    instances: InstanceSet
    model: ClassifierModel
    t_max: int


_SCHEMA_MENU = [
    # (feature specs, label) with expanded widths <= 10
    ([("c", 3), ("c", 3), ("c", 3)], "3x3cat"),          # 9 expanded, |T|=3
    ([("c", 3), ("c", 3), ("b", 1), ("b", 1)], "2cat2bin"),  # 8 expanded, |T|=4
    ([("c", 4), ("c", 3), ("b", 1)], "4+3+1"),           # 8 expanded, |T|=3
    ([("n", 2), ("c", 3), ("b", 1), ("b", 1)], "num-mix"),   # 8 expanded, |T|=4
    ([("c", 5), ("c", 5)], "2x5cat"),                    # 10 expanded, |T|=2
    ([("b", 1)] * 6, "6bin"),                            # 6 expanded, |T|=6
]


def _schema_from_menu(idx: int) -> FeatureSchema:
    feats = []
    for j, (kind, width) in enumerate(_SCHEMA_MENU[idx][0]):
        if kind == "b":
            feats.append({"name": f"f{j}", "kind": "binary"})
        elif kind == "c":
            feats.append(
                {"name": f"f{j}", "kind": "categorical", "levels": [f"l{v}" for v in range(width)]}
            )
        else:
            feats.append({"name": f"f{j}", "kind": "numeric", "edges": [float(v) for v in range(1, width + 1)]})
    return build_schema({"features": feats})


def random_model(schema: FeatureSchema, rng: np.random.Generator, relu: bool) -> ClassifierModel:
    ne = schema.n_expanded
    if not relu:
        w = rng.normal(0.0, 1.2, ne)
        model = ClassifierModel(tau=0.5, weights=w, bias=float(rng.normal(0.0, 0.5)))
    else:
        width = int(rng.integers(3, 6))
        w1 = rng.normal(0.0, 1.0, (width, ne))
        b1 = rng.normal(0.0, 0.5, width)
        w2 = rng.normal(0.0, 1.0, (1, width))
        b2 = np.zeros(1)
        model = ClassifierModel(tau=0.5, layers=(ReluLayer(w1, b1), ReluLayer(w2, b2)))
        # center the output bias at the median logit so both classes occur
        from groupcf.classifier import logits

        med = float(np.median(logits(model, valid_points(schema))))
        b2 = np.array([-med + 0.05])
        model = ClassifierModel(tau=0.5, layers=(ReluLayer(w1, b1), ReluLayer(w2, b2)))
    return model


def make_fixture(
    seed: int,
    n_instances: int = 6,
    t_max: int = 2,
    relu: bool = False,
    schema_idx: int | None = None,
) -> Fixture | None:
    """One random fixture, or None when the draw cannot produce one."""
    rng = np.random.default_rng(seed)
    idx = int(rng.integers(0, len(_SCHEMA_MENU))) if schema_idx is None else schema_idx
    schema = _schema_from_menu(idx)
    model = random_model(schema, rng, relu)

    points = valid_points(schema)
    pos_mask = np.asarray(is_positive(model, points))
    if not pos_mask.any() or pos_mask.all():
        return None
    feat_of = schema.feature_of_column()
    positives = points[pos_mask]
    negatives = points[~pos_mask]

    # keep negatives that admit a counterfactual within the budget
    coverable = []
    for x in negatives:
        diffs = positives != x[None, :]
        nfeats = np.array(
            [len({int(feat_of[h]) for h in np.flatnonzero(row)}) for row in diffs]
        )
        if (nfeats <= t_max).any():
            coverable.append(x)
    if len(coverable) < n_instances:
        return None
    order = rng.permutation(len(coverable))[:n_instances]
    instances = InstanceSet(
        schema,
        [
            BinaryInstance(tuple(int(v) for v in coverable[i]), f"i{i}")
            for i in order
        ],
    )
    return Fixture(f"s{seed}-{_SCHEMA_MENU[idx][1]}-t{t_max}", instances, model, t_max)


def fixture_battery(count: int = 20, start_seed: int = 100) -> list[Fixture]:
    """Deterministic battery of feasible fixtures across sizes and model kinds."""
    out: list[Fixture] = []
    seed = start_seed
    while len(out) < count and seed < start_seed + 4000:
        t_max = [1, 2, 3][len(out) % 3]
        relu = len(out) % 2 == 1
        # the one-shot baseline must prove optimality on every fixture, so the
        # tightest-budget draws stay small; larger sets exercise t_max 2 and 3
        n_inst = 4 + len(out) % 3 if t_max == 1 else 4 + len(out) % 5
        fix = make_fixture(seed, n_instances=n_inst, t_max=t_max, relu=relu)
        seed += 1
        if fix is not None:
            out.append(fix)
    if len(out) < count:
        raise RuntimeError(f"fixture battery exhausted seeds: got {len(out)}/{count}")
    return out
