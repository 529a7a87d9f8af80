"""Supervised base learners used by every estimator.

Kinds: ``linear`` (OLS / ridge / elastic net), ``logistic``, ``forest``
(bagged CART), ``boosted-stumps`` (gradient boosting) and ``mlp``.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np

from .linear import LinearModel, LogisticModel
from .mlp import Dense, MLPModel, max_relative_error, mlp_loss_and_grad, numeric_gradient
from .spec import DEFAULTS, LearnerError, LearnerSpec
from .trees import Boosted, Forest, Tree, check_labels

__all__ = [
    "LearnerSpec",
    "LearnerError",
    "FittedModel",
    "fit_regressor",
    "fit_classifier",
    "fit_mean_model",
    "gradient_check",
    "save_model",
    "load_model",
    "Dense",
    "Tree",
]

MODEL_FORMAT_VERSION = 1


class FittedModel:
    """A fitted learner. ``predict`` returns E[y|x] (a probability for classifiers)."""

    def __init__(self, spec: LearnerSpec, task: str, impl, n_features: int):
        self.spec = spec
        self.task = task
        self._impl = impl
        self.n_features = n_features

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise LearnerError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.asarray(self._impl.predict(X), dtype=float)
        if self.task == "classification":
            out = np.clip(out, 0.0, 1.0)
        return out

    def predict_proba(self, X) -> np.ndarray:
        if self.task != "classification":
            raise LearnerError("predict_proba is only defined for classifiers")
        return self.predict(X)

    @property
    def coef(self):
        return getattr(self._impl, "coef", None)

    @property
    def intercept(self):
        return getattr(self._impl, "intercept", None)

    def __repr__(self):
        return f"FittedModel({self.spec.describe()}, task={self.task})"


def _prepare(X, y, w=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0 or X.shape[0] != len(y):
        raise LearnerError(f"cannot fit on {X.shape[0]} rows with {len(y)} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise LearnerError("non-finite values in training data")
    if w is not None:
        w = np.asarray(w, dtype=float).ravel()
        if len(w) != len(y) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise LearnerError("sample weights must be finite, non-negative and not all zero")
    return X, y, w


def fit_regressor(spec, X, y, sample_weight=None) -> FittedModel:
    """Fit a model of E[y|x] under (optionally weighted) squared loss.

    A ``logistic`` spec is accepted for targets in [0, 1] and fits soft-label
    cross-entropy, which also estimates E[y|x].
    """
    spec = LearnerSpec.from_dict(spec)
    X, y, w = _prepare(X, y, sample_weight)
    p = spec.params
    if spec.kind == "linear":
        impl = LinearModel(p).fit(X, y, w)
    elif spec.kind == "logistic":
        impl = LogisticModel(p).fit(X, y, w)
    elif spec.kind == "forest":
        impl = Forest(p, spec.seed).fit(X, y, w)
    elif spec.kind == "boosted-stumps":
        impl = Boosted(p, spec.seed, "squared").fit(X, y, w)
    else:
        impl = MLPModel(p, spec.seed, "squared").fit(X, y, w)
    return FittedModel(spec, "regression", impl, X.shape[1])


def fit_classifier(spec, X, labels) -> FittedModel:
    """Fit P(label = 1 | x); outputs are probabilities in [0, 1]."""
    spec = LearnerSpec.from_dict(spec)
    X, y, _ = _prepare(X, labels)
    check_labels(y)
    p = spec.params
    if spec.kind == "linear":
        raise LearnerError("linear is a regressor; use 'logistic' for classification")
    if spec.kind == "logistic":
        impl = LogisticModel(p).fit(X, y)
    elif spec.kind == "forest":
        impl = Forest(p, spec.seed).fit(X, y)
    elif spec.kind == "boosted-stumps":
        impl = Boosted(p, spec.seed, "logistic").fit(X, y)
    else:
        impl = MLPModel(p, spec.seed, "logistic").fit(X, y)
    return FittedModel(spec, "classification", impl, X.shape[1])


def fit_mean_model(spec, X, y) -> FittedModel:
    """Outcome model for meta-learners: a classifier when the targets are 0/1
    and the kind supports it, otherwise a regressor."""
    spec = LearnerSpec.from_dict(spec)
    y = np.asarray(y, dtype=float)
    binary = np.all((y == 0) | (y == 1))
    if binary and spec.kind in ("logistic", "boosted-stumps", "mlp"):
        return fit_classifier(spec, X, y)
    return fit_regressor(spec, X, y)


def gradient_check(mlp_spec, X, y, objective="squared", step=1e-5) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    The network is built exactly as :func:`fit_regressor` would initialize it
    (same seed, same widths), evaluated on raw ``X``.
    """
    spec = LearnerSpec.from_dict(mlp_spec)
    if spec.kind != "mlp":
        raise LearnerError("gradient_check needs an mlp spec")
    X, y, _ = _prepare(X, y)
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    net = Dense([X.shape[1], *p["hidden"], 1], p["activation"], "identity", rng, p["init"])
    _, analytic = mlp_loss_and_grad(net, X, y, objective, p["alpha"])
    numeric = numeric_gradient(lambda: mlp_loss_and_grad(net, X, y, objective, p["alpha"])[0], net.params, step)
    return max_relative_error(analytic, numeric)


def save_model(model, path):
    """Pickle a fitted model (or CATE model) with a format version header."""
    payload = {"format": "htekit-model", "version": MODEL_FORMAT_VERSION, "model": model}
    Path(path).write_bytes(pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))


def load_model(path):
    payload = pickle.loads(Path(path).read_bytes())
    if not isinstance(payload, dict) or payload.get("format") != "htekit-model":
        raise LearnerError(f"{path} is not a saved model")
    if payload["version"] != MODEL_FORMAT_VERSION:
        raise LearnerError(f"unsupported model format version {payload['version']}")
    return payload["model"]
