"""Pre-trained binary classifiers and their encoding as MIP constraint fragments.

Two model families are supported: logistic regression over the expanded binary
columns, and feed-forward ReLU networks with a single pre-sigmoid output logit.
Both can be evaluated directly or emitted as linear constraints that force a
candidate point to be classified positive (probability >= tau) inside any MIP.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .solver.model import MipModel, VarKind


class ClassifierError(ValueError):
    pass


class DimensionMismatch(ClassifierError):
    pass


class UnboundedActivation(ClassifierError):
    """Interval propagation produced non-finite or absurdly large bounds."""


class SingleClassData(ClassifierError):
    pass


@dataclass(frozen=True)
class ReluLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)


@dataclass(frozen=True)
class ClassifierModel:
    """LR or ReLU network with a decision threshold.

    Exactly one of ``weights`` (LR) or ``layers`` (ReLU net) is set.  For a
    ReLU net every layer except the last is followed by a ReLU; the last layer
    has output width 1 and its affine output is the decision logit.  A point
    counts positive when sigmoid(logit) >= tau, i.e. logit >= log(tau/(1-tau)).
    """

    tau: float
    weights: np.ndarray | None = None
    bias: float = 0.0
    layers: tuple[ReluLayer, ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 < self.tau < 1.0):
            raise ClassifierError(f"tau must be in (0,1), got {self.tau}")
        if (self.weights is None) == (not self.layers):
            raise ClassifierError("exactly one of weights (lr) or layers (relu) required")
        if self.weights is not None:
            if not np.isfinite(self.weights).all() or not math.isfinite(self.bias):
                raise ClassifierError("lr weights must be finite")
        else:
            width = self.layers[0].weights.shape[1]
            for layer in self.layers:
                if layer.weights.shape[1] != width:
                    raise DimensionMismatch("layer input width does not chain")
                if layer.weights.shape[0] != layer.bias.shape[0]:
                    raise DimensionMismatch("bias width does not match weight rows")
                if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                    raise ClassifierError("layer weights must be finite")
                width = layer.weights.shape[0]
            if width != 1:
                raise DimensionMismatch("final layer must have scalar output")

    @property
    def variant(self) -> str:
        return "lr" if self.weights is not None else "relu"

    @property
    def input_width(self) -> int:
        if self.weights is not None:
            return int(self.weights.shape[0])
        return int(self.layers[0].weights.shape[1])

    @property
    def logit_threshold(self) -> float:
        return math.log(self.tau / (1.0 - self.tau))


def logits(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """Decision logits for a batch of points, shape (n,) for input (n, width)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.input_width:
        raise DimensionMismatch(
            f"input width {x.shape[1]} does not match model width {model.input_width}"
        )
    if model.weights is not None:
        return x @ model.weights + model.bias
    act = x
    for layer in model.layers[:-1]:
        act = np.maximum(0.0, act @ layer.weights.T + layer.bias)
    last = model.layers[-1]
    return (act @ last.weights.T + last.bias)[:, 0]


def predict_proba(model: ClassifierModel, x) -> float | np.ndarray:
    """Probability of the positive class; scalar for one instance, array for a batch."""
    arr = x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float)
    single = arr.ndim == 1
    z = logits(model, arr)
    p = 1.0 / (1.0 + np.exp(-z))
    return float(p[0]) if single else p


def is_positive(model: ClassifierModel, x) -> bool | np.ndarray:
    """Decision at the threshold; ties at exactly tau count as positive."""
    arr = x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float)
    single = arr.ndim == 1
    z = logits(model, arr)
    out = z >= model.logit_threshold
    return bool(out[0]) if single else out


_BIGM_CAP = 1e8


@dataclass
class ConstraintFragment:
    """Record of the rows and auxiliaries emitted by :func:`embed`.

    ``pre_bounds`` holds the interval-propagated (lo, hi) per ReLU unit, from
    which the big-M coefficients were taken.
    """

    input_vars: list[int]
    aux_vars: list[int] = field(default_factory=list)
    indicator_vars: list[int] = field(default_factory=list)
    row_ids: list[int] = field(default_factory=list)
    threshold_row: int = -1
    pre_bounds: list[tuple[float, float]] = field(default_factory=list)


def activation_intervals(model: ClassifierModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer pre-activation bounds from interval propagation over [0,1] inputs."""
    lo = np.zeros(model.input_width)
    hi = np.ones(model.input_width)
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for layer in model.layers:
        w = layer.weights
        pre_lo = layer.bias + np.minimum(w, 0.0) @ hi + np.maximum(w, 0.0) @ lo
        pre_hi = layer.bias + np.maximum(w, 0.0) @ hi + np.minimum(w, 0.0) @ lo
        out.append((pre_lo, pre_hi))
        lo = np.maximum(0.0, pre_lo)
        hi = np.maximum(0.0, pre_hi)
    return out


def embed(model: ClassifierModel, mip: MipModel, input_vars: list[int], prefix: str = "clf") -> ConstraintFragment:
    """Append constraints to ``mip`` forcing the input point to classify positive.

    Exactness contract: a 0/1 assignment to ``input_vars`` extends to a
    feasible assignment of the fragment's auxiliaries iff its probability is
    >= tau.  ReLU units use the standard big-M disjunction with per-unit
    constants from interval propagation.
    """
    if len(input_vars) != model.input_width:
        raise DimensionMismatch(
            f"{len(input_vars)} input vars for model width {model.input_width}"
        )
    frag = ConstraintFragment(input_vars=list(input_vars))
    thr = model.logit_threshold

    if model.weights is not None:
        coeffs = {v: float(w) for v, w in zip(input_vars, model.weights)}
        frag.threshold_row = mip.add_constr(coeffs, ">=", thr - model.bias, name=f"{prefix}_thr")
        frag.row_ids.append(frag.threshold_row)
        return frag

    intervals = activation_intervals(model)
    prev_vars = list(input_vars)
    for li, layer in enumerate(model.layers):
        pre_lo, pre_hi = intervals[li]
        if not (np.isfinite(pre_lo).all() and np.isfinite(pre_hi).all()):
            raise UnboundedActivation("non-finite activation bounds")
        if max(np.abs(pre_lo).max(), np.abs(pre_hi).max()) > _BIGM_CAP:
            raise UnboundedActivation("activation bounds exceed big-M cap")
        last = li == len(model.layers) - 1
        next_vars: list[int] = []
        for u in range(layer.weights.shape[0]):
            lo_u, hi_u = float(pre_lo[u]), float(pre_hi[u])
            p = mip.add_var(f"{prefix}_p{li}_{u}", VarKind.CONTINUOUS, lo_u, hi_u)
            frag.aux_vars.append(p)
            coeffs = {p: 1.0}
            for v, w in zip(prev_vars, layer.weights[u]):
                if w != 0.0:
                    coeffs[v] = coeffs.get(v, 0.0) - float(w)
            rid = mip.add_constr(coeffs, "==", float(layer.bias[u]), name=f"{prefix}_pre{li}_{u}")
            frag.row_ids.append(rid)
            frag.pre_bounds.append((lo_u, hi_u))
            if last:
                frag.threshold_row = mip.add_constr({p: 1.0}, ">=", thr, name=f"{prefix}_thr")
                frag.row_ids.append(frag.threshold_row)
                continue
            m_pos = max(hi_u, 0.0)
            m_neg = max(-lo_u, 0.0)
            a = mip.add_var(f"{prefix}_a{li}_{u}", VarKind.CONTINUOUS, 0.0, m_pos)
            s = mip.add_var(f"{prefix}_s{li}_{u}", VarKind.BINARY, 0.0, 1.0)
            frag.aux_vars.append(a)
            frag.indicator_vars.append(s)
            frag.row_ids.append(mip.add_constr({a: 1.0, p: -1.0}, ">=", 0.0))
            frag.row_ids.append(mip.add_constr({a: 1.0, s: -m_pos}, "<=", 0.0))
            frag.row_ids.append(mip.add_constr({a: 1.0, p: -1.0, s: m_neg}, "<=", m_neg))
            next_vars.append(a)
        prev_vars = next_vars
    return frag


def train_lr(matrix: np.ndarray, labels: np.ndarray, c: float = 10.0, tau: float = 0.5) -> ClassifierModel:
    """Fit an L2-regularized logistic regression by Newton's method.

    Regularization follows the usual inverse-strength convention: the penalty
    is ||w||^2 / (2c).  Deterministic (no randomness in the fit).
    """
    x = np.asarray(matrix, dtype=float)
    y = np.asarray(labels, dtype=float)
    if set(np.unique(y)) != {0.0, 1.0}:
        raise SingleClassData("training data must contain both classes")
    n, d = x.shape
    xb = np.hstack([x, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    lam = np.zeros(d + 1)
    lam[:d] = 1.0 / c
    for _ in range(100):
        z = xb @ theta
        p = 1.0 / (1.0 + np.exp(-z))
        grad = xb.T @ (p - y) + lam * theta
        w_diag = np.maximum(p * (1.0 - p), 1e-10)
        hess = (xb.T * w_diag) @ xb + np.diag(lam + 1e-10)
        step = np.linalg.solve(hess, grad)
        theta -= step
        if np.abs(step).max() < 1e-10:
            break
    return ClassifierModel(tau=tau, weights=theta[:d].copy(), bias=float(theta[d]))


def save_model(model: ClassifierModel, path: str) -> None:
    if model.weights is not None:
        payload = {
            "variant": "lr",
            "tau": model.tau,
            "weights": model.weights.tolist(),
            "bias": model.bias,
        }
    else:
        payload = {
            "variant": "relu",
            "tau": model.tau,
            "layers": [
                {"W": layer.weights.tolist(), "b": layer.bias.tolist()}
                for layer in model.layers
            ],
        }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> ClassifierModel:
    with open(path) as fh:
        payload = json.load(fh)
    return model_from_dict(payload)


def model_from_dict(payload: dict) -> ClassifierModel:
    variant = payload.get("variant")
    tau = float(payload.get("tau", 0.5))
    if variant == "lr":
        return ClassifierModel(
            tau=tau,
            weights=np.asarray(payload["weights"], dtype=float),
            bias=float(payload["bias"]),
        )
    if variant == "relu":
        layers = tuple(
            ReluLayer(np.asarray(entry["W"], dtype=float), np.asarray(entry["b"], dtype=float))
            for entry in payload["layers"]
        )
        return ClassifierModel(tau=tau, layers=layers)
    raise ClassifierError(f"unknown model variant {variant!r}")
