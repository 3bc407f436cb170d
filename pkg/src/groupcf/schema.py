"""Feature universe: original tabular features and their expanded binary columns.

A dataset feature is either already binary, categorical (one-hot encoded), or
numeric (discretized into bins, then one-hot encoded).  The schema records the
mapping from each original feature to its contiguous block of expanded binary
columns and which blocks carry an exactly-one constraint.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """Invalid schema description."""


class DuplicateFeatureName(SchemaError):
    pass


class EmptyBins(SchemaError):
    pass


class NonMonotoneBinEdges(SchemaError):
    pass


class EncodingError(ValueError):
    """A raw record cannot be encoded under the schema."""


class MissingField(EncodingError):
    pass


class UnknownCategoryLevel(EncodingError):
    pass


class IoFailure(OSError):
    pass


class HeaderMismatch(ValueError):
    pass


class RowEncodingError(ValueError):
    """One or more CSV rows failed to encode; carries (line, message) pairs."""

    def __init__(self, failures: Sequence[tuple[int, str]]):
        self.failures = list(failures)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.failures[:10])
        extra = "" if len(self.failures) <= 10 else f" (+{len(self.failures) - 10} more)"
        super().__init__(f"{len(self.failures)} row(s) failed to encode: {lines}{extra}")


@dataclass(frozen=True)
class OriginalFeature:
    name: str
    kind: str  # "binary" | "categorical" | "numeric"
    levels: tuple[str, ...] = ()   # categorical only
    edges: tuple[float, ...] = ()  # numeric only; interior cut points, bins are (-inf,e1], (e1,e2], ...

    @property
    def width(self) -> int:
        if self.kind == "binary":
            return 1
        if self.kind == "categorical":
            return len(self.levels)
        return len(self.edges) + 1


@dataclass(frozen=True)
class FeatureSchema:
    """Original features plus the layout of their expanded binary columns."""

    features: tuple[OriginalFeature, ...]
    expanded_index: tuple[tuple[int, ...], ...]  # feature -> expanded column ids (contiguous)
    onehot_set: frozenset[int]                   # features whose block must sum to exactly 1

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_expanded(self) -> int:
        return sum(len(block) for block in self.expanded_index)

    def feature_of_column(self) -> np.ndarray:
        """Array mapping each expanded column to its original feature index."""
        out = np.empty(self.n_expanded, dtype=np.int64)
        for f, block in enumerate(self.expanded_index):
            for h in block:
                out[h] = f
        return out

    def expanded_names(self) -> list[str]:
        names = []
        for feat, block in zip(self.features, self.expanded_index):
            if feat.kind == "binary":
                names.append(feat.name)
            elif feat.kind == "categorical":
                names.extend(f"{feat.name}={lvl}" for lvl in feat.levels)
            else:
                for b in range(len(block)):
                    names.append(f"{feat.name}:{_bin_label(feat.edges, b)}")
        return names

    def columns_for(self, feature_ids: Iterable[int]) -> np.ndarray:
        """Boolean mask over expanded columns covered by the given original features."""
        mask = np.zeros(self.n_expanded, dtype=bool)
        for f in feature_ids:
            mask[list(self.expanded_index[f])] = True
        return mask

    def validate_values(self, values: np.ndarray) -> None:
        if values.shape != (self.n_expanded,):
            raise EncodingError(
                f"instance has {values.shape} values, schema expects {self.n_expanded}"
            )
        if not np.isin(values, (0, 1)).all():
            raise EncodingError("instance values must be 0/1")
        for f in self.onehot_set:
            block = list(self.expanded_index[f])
            if int(values[block].sum()) != 1:
                raise EncodingError(
                    f"feature '{self.features[f].name}' must have exactly one active column"
                )


def _bin_label(edges: tuple[float, ...], b: int) -> str:
    if b == 0:
        return f"<= {edges[0]:g}"
    if b == len(edges):
        return f"> {edges[-1]:g}"
    return f"({edges[b - 1]:g},{edges[b]:g}]"


def build_schema(spec: Mapping | str) -> FeatureSchema:
    """Build a FeatureSchema from a declarative description.

    ``spec`` is either the parsed JSON object ``{"features": [...]}`` or a path
    to a JSON file containing it.
    """
    if isinstance(spec, str):
        try:
            with open(spec) as fh:
                spec = json.load(fh)
        except OSError as exc:
            raise IoFailure(f"cannot read schema file: {exc}") from exc
    raw_feats = spec.get("features")
    if not raw_feats:
        raise SchemaError("schema spec has no features")

    seen: set[str] = set()
    feats: list[OriginalFeature] = []
    for entry in raw_feats:
        name = entry.get("name")
        kind = entry.get("kind")
        if not name or not isinstance(name, str):
            raise SchemaError(f"feature with missing/invalid name: {entry!r}")
        if name in seen:
            raise DuplicateFeatureName(f"duplicate feature name: {name!r}")
        seen.add(name)
        if kind == "binary":
            feats.append(OriginalFeature(name, "binary"))
        elif kind == "categorical":
            levels = tuple(str(v) for v in entry.get("levels", ()))
            if len(levels) < 2:
                raise SchemaError(f"categorical feature {name!r} needs >= 2 levels")
            if len(set(levels)) != len(levels):
                raise SchemaError(f"categorical feature {name!r} has duplicate levels")
            feats.append(OriginalFeature(name, "categorical", levels=levels))
        elif kind == "numeric":
            edges = tuple(float(v) for v in entry.get("edges", ()))
            if not edges:
                raise EmptyBins(f"numeric feature {name!r} has no bin edges")
            if any(not math.isfinite(e) for e in edges):
                raise NonMonotoneBinEdges(f"numeric feature {name!r} has non-finite edges")
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise NonMonotoneBinEdges(
                    f"numeric feature {name!r} edges must be strictly increasing"
                )
            feats.append(OriginalFeature(name, "numeric", edges=edges))
        else:
            raise SchemaError(f"feature {name!r}: unknown kind {kind!r}")

    blocks: list[tuple[int, ...]] = []
    onehot: set[int] = set()
    col = 0
    for f, feat in enumerate(feats):
        width = feat.width
        blocks.append(tuple(range(col, col + width)))
        col += width
        if width >= 2:
            onehot.add(f)
    return FeatureSchema(tuple(feats), tuple(blocks), frozenset(onehot))


@dataclass(frozen=True)
class BinaryInstance:
    """A point of the expanded binary space, valid under its schema."""

    values: tuple[int, ...]
    source_id: str

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int8)


def encode_row(schema: FeatureSchema, raw: Mapping[str, object], source_id: str = "") -> BinaryInstance:
    """One-hot encode a raw record.  Numeric values on a bin edge go to the lower bin."""
    bits = np.zeros(schema.n_expanded, dtype=np.int8)
    for feat, block in zip(schema.features, schema.expanded_index):
        if feat.name not in raw:
            raise MissingField(f"record missing feature {feat.name!r}")
        value = raw[feat.name]
        if feat.kind == "binary":
            bit = _parse_binary(feat.name, value)
            bits[block[0]] = bit
        elif feat.kind == "categorical":
            try:
                pos = feat.levels.index(str(value))
            except ValueError:
                raise UnknownCategoryLevel(
                    f"feature {feat.name!r}: unknown level {value!r}"
                ) from None
            bits[block[pos]] = 1
        else:
            try:
                x = float(value)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                raise EncodingError(f"feature {feat.name!r}: non-numeric value {value!r}") from None
            if not math.isfinite(x):
                raise EncodingError(f"feature {feat.name!r}: non-finite value {value!r}")
            bits[block[bisect_left(feat.edges, x)]] = 1
    return BinaryInstance(tuple(int(v) for v in bits), source_id)


def _parse_binary(name: str, value: object) -> int:
    text = str(value).strip()
    if text in ("0", "1"):
        return int(text)
    raise EncodingError(f"feature {name!r}: binary value must be 0 or 1, got {value!r}")


def decode_instance(schema: FeatureSchema, instance: BinaryInstance) -> dict[str, object]:
    """Map an encoded instance back to a raw record (numeric features to a bin label)."""
    values = instance.as_array()
    out: dict[str, object] = {}
    for feat, block in zip(schema.features, schema.expanded_index):
        if feat.kind == "binary":
            out[feat.name] = int(values[block[0]])
        else:
            active = [i for i, h in enumerate(block) if values[h] == 1]
            if len(active) != 1:
                raise EncodingError(f"feature {feat.name!r}: not one-hot")
            if feat.kind == "categorical":
                out[feat.name] = feat.levels[active[0]]
            else:
                out[feat.name] = _bin_label(feat.edges, active[0])
    return out


@dataclass
class InstanceSet:
    """A non-empty set of schema-valid instances with unique source ids."""

    schema: FeatureSchema
    instances: list[BinaryInstance] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.instances:
            raise ValueError("InstanceSet must not be empty")
        seen: set[str] = set()
        for inst in self.instances:
            if inst.source_id in seen:
                raise ValueError(f"duplicate source_id {inst.source_id!r}")
            seen.add(inst.source_id)
            self.schema.validate_values(inst.as_array())

    def __len__(self) -> int:
        return len(self.instances)

    def matrix(self) -> np.ndarray:
        """(n_instances, n_expanded) 0/1 matrix in instance order."""
        return np.stack([inst.as_array() for inst in self.instances])

    def ids(self) -> list[str]:
        return [inst.source_id for inst in self.instances]

    def subset(self, indices: Sequence[int]) -> "InstanceSet":
        return InstanceSet(self.schema, [self.instances[i] for i in indices])


def load_csv(
    path: str,
    schema_spec: Mapping | str | FeatureSchema,
    label_column: str | None = None,
) -> InstanceSet | tuple[InstanceSet, np.ndarray]:
    """Load an RFC-4180 CSV with a header row into an InstanceSet.

    Extra columns not named by the schema are ignored.  When ``label_column``
    is given, that column is parsed as a 0/1 label vector and returned
    alongside the instances.
    """
    schema = schema_spec if isinstance(schema_spec, FeatureSchema) else build_schema(schema_spec)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoFailure(f"cannot read data file: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [f.name for f in schema.features if f.name not in header]
        if missing:
            raise HeaderMismatch(f"CSV header missing schema features: {missing}")
        if label_column is not None and label_column not in header:
            raise HeaderMismatch(f"CSV header missing label column {label_column!r}")
        instances: list[BinaryInstance] = []
        labels: list[int] = []
        failures: list[tuple[int, str]] = []
        for lineno, row in enumerate(reader, start=2):
            try:
                instances.append(encode_row(schema, row, source_id=f"row{lineno}"))
                if label_column is not None:
                    labels.append(_parse_binary(label_column, row[label_column]))
            except (EncodingError, ValueError) as exc:
                failures.append((lineno, str(exc)))
        if failures:
            raise RowEncodingError(failures)
        if not instances:
            raise RowEncodingError([(1, "no data rows")])
    result = InstanceSet(schema, instances)
    if label_column is not None:
        return result, np.asarray(labels, dtype=np.int8)
    return result
