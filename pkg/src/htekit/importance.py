"""Feature attribution for CATE models: permutation importance and exact Shapley values.

Both methods explain the predicted effect ``tau_hat(x)``, not outcome predictions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import rng_from

MAX_SHAPLEY_FEATURES = 12


class ImportanceError(ValueError):
    pass


@dataclass
class ImportanceReport:
    feature_names: tuple
    scores: np.ndarray
    method: str
    attributions: Optional[np.ndarray] = None  # (instances, features), exact-shapley only
    instance_ids: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def ranks(self) -> np.ndarray:
        """1 = most important; ties broken by feature order."""
        order = np.argsort(-self.scores, kind="stable")
        ranks = np.empty(len(order), dtype=int)
        ranks[order] = np.arange(1, len(order) + 1)
        return ranks

    def importance_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["feature", "score", "rank"])
        ranks = self.ranks
        for j in np.argsort(ranks):
            wr.writerow([self.feature_names[j], repr(float(self.scores[j])), int(ranks[j])])
        return buf.getvalue()

    def attributions_csv(self) -> str:
        if self.attributions is None:
            raise ImportanceError("attributions exist only for exact-shapley reports")
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["instance_id", "feature", "value"])
        for i, row in zip(self.instance_ids, self.attributions):
            for name, v in zip(self.feature_names, row):
                wr.writerow([int(i), name, repr(float(v))])
        return buf.getvalue()


def _names(dataset, d):
    names = getattr(dataset, "feature_names", None)
    return tuple(names) if names else tuple(f"x{j}" for j in range(d))


def permutation_importance(model, dataset, repeats: int = 5, seed: int = 0) -> ImportanceReport:
    """Mean squared change in ``tau_hat`` when one column is shuffled.

    ``dataset`` is an ObservationalDataset or a bare covariate matrix.
    """
    X = np.asarray(getattr(dataset, "X", dataset), dtype=float)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ImportanceError("permutation importance needs at least one feature")
    if repeats < 1:
        raise ImportanceError("repeats must be >= 1")
    rng = rng_from(seed)
    base = model.predict_tau(X)
    n, d = X.shape
    scores = np.zeros(d)
    for j in range(d):
        total = 0.0
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(n), j]
            total += float(np.mean((model.predict_tau(Xp) - base) ** 2))
        scores[j] = total / repeats
    return ImportanceReport(_names(dataset, d), scores, "permutation", meta={"repeats": repeats, "seed": seed})


def _shapley_weights(d):
    # weight for a coalition of size s not containing the feature
    return np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])


def _coalition_values(model, x, baseline):
    """tau_hat for every coalition; bit j of the index means feature j comes from ``x``."""
    d = len(x)
    masks = ((np.arange(2**d)[:, None] >> np.arange(d)) & 1).astype(bool)
    Z = np.where(masks, x[None, :], baseline[None, :])
    return model.predict_tau(Z)


def exact_shapley(model, instance, baseline) -> np.ndarray:
    """Shapley values of ``tau_hat`` at ``instance`` by full coalition enumeration.

    Features outside a coalition take their ``baseline`` value. Attributions
    sum to ``tau_hat(instance) - tau_hat(baseline)``.
    """
    x = np.asarray(instance, dtype=float).ravel()
    b = np.asarray(baseline, dtype=float).ravel()
    d = len(x)
    if len(b) != d:
        raise ImportanceError("instance and baseline lengths differ")
    if d == 0:
        raise ImportanceError("no features to attribute")
    if d > MAX_SHAPLEY_FEATURES:
        raise ImportanceError(
            f"exact Shapley enumerates 2^d coalitions; d={d} exceeds {MAX_SHAPLEY_FEATURES}. "
            "Use permutation_importance instead."
        )
    v = _coalition_values(model, x, b)
    w = _shapley_weights(d)
    idx = np.arange(2**d)
    size = np.array([bin(k).count("1") for k in idx])
    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        without = idx[(idx & bit) == 0]
        phi[j] = np.sum(w[size[without]] * (v[without | bit] - v[without]))
    return phi


def shapley_report(model, dataset, instances=None, baseline=None) -> ImportanceReport:
    """Exact Shapley attributions for selected rows; score = mean |attribution|.

    The default baseline is the column means of the dataset.
    """
    X = np.asarray(getattr(dataset, "X", dataset), dtype=float)
    n, d = X.shape
    if d > MAX_SHAPLEY_FEATURES:
        raise ImportanceError(
            f"exact Shapley supports at most {MAX_SHAPLEY_FEATURES} features (got {d}); "
            "use permutation_importance instead"
        )
    base = X.mean(axis=0) if baseline is None else np.asarray(baseline, dtype=float)
    ids = np.arange(n) if instances is None else np.asarray(instances, dtype=int)
    att = np.array([exact_shapley(model, X[i], base) for i in ids]).reshape(len(ids), d)
    return ImportanceReport(
        _names(dataset, d), np.abs(att).mean(axis=0), "exact-shapley", att, ids, {"baseline": base.tolist()}
    )

