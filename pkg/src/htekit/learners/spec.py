"""Learner specifications: kind, hyperparameters and seed."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


class LearnerError(ValueError):
    """Invalid learner specification or a failed fit."""


# kind -> {hyperparameter: default}
DEFAULTS: dict[str, dict[str, Any]] = {
    "linear": {"alpha": 0.0, "l1_ratio": 0.5, "standardize": True, "max_iter": 5000, "tol": 1e-10},
    "logistic": {"alpha": 0.0, "lr": None, "max_iter": 5000, "tol": 1e-8, "standardize": True},
    "forest": {
        "n_trees": 100,
        "max_depth": 8,
        "min_samples_leaf": 5,
        "max_features": "sqrt",
        "bootstrap": True,
    },
    "boosted-stumps": {
        "n_estimators": 200,
        "learning_rate": 0.1,
        "max_depth": 1,
        "min_samples_leaf": 1,
        "subsample": 1.0,
    },
    "mlp": {
        "hidden": [32],
        "activation": "tanh",
        "lr": 0.01,
        "epochs": 200,
        "batch_size": 64,
        "alpha": 0.0,
        "init": "glorot",
        "standardize": True,
    },
}

ALIASES = {"boosted": "boosted-stumps", "elasticnet": "linear", "ridge": "linear", "rf": "forest"}


def _check(kind: str, params: dict):
    def need(cond, msg):
        if not cond:
            raise LearnerError(f"{kind}: {msg}")

    if "alpha" in params:
        need(params["alpha"] >= 0, "alpha must be >= 0")
    if kind == "linear":
        need(0.0 <= params["l1_ratio"] <= 1.0, "l1_ratio must lie in [0, 1]")
    if kind == "logistic" and params["lr"] is not None:
        need(params["lr"] > 0, "lr must be > 0")
    if kind == "forest":
        need(int(params["n_trees"]) >= 1, "n_trees must be >= 1")
        need(int(params["max_depth"]) >= 1, "max_depth must be >= 1")
        need(int(params["min_samples_leaf"]) >= 1, "min_samples_leaf must be >= 1")
        mf = params["max_features"]
        need(
            mf in ("sqrt", "all", "third") or (isinstance(mf, (int, float)) and mf > 0),
            "max_features must be 'sqrt', 'third', 'all' or a positive number",
        )
    if kind == "boosted-stumps":
        need(int(params["n_estimators"]) >= 1, "n_estimators must be >= 1")
        need(params["learning_rate"] > 0, "learning_rate must be > 0")
        need(int(params["max_depth"]) >= 1, "max_depth must be >= 1")
        need(0 < params["subsample"] <= 1, "subsample must lie in (0, 1]")
    if kind == "mlp":
        need(all(int(w) >= 1 for w in params["hidden"]), "layer widths must be >= 1")
        need(params["lr"] > 0, "lr must be > 0")
        need(int(params["epochs"]) >= 1, "epochs must be >= 1")
        need(int(params["batch_size"]) >= 1, "batch_size must be >= 1")
        need(params["activation"] in ("tanh", "relu", "identity"), "unknown activation")
        need(params["init"] in ("glorot", "zeros"), "init must be 'glorot' or 'zeros'")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in DEFAULTS:
            raise LearnerError(f"unknown learner kind {self.kind!r}; expected one of {sorted(DEFAULTS)}")
        unknown = set(self.params) - set(DEFAULTS[kind])
        if unknown:
            raise LearnerError(f"{kind}: unknown hyperparameter(s) {sorted(unknown)}")
        merged = {**DEFAULTS[kind], **self.params}
        _check(kind, merged)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_dict(cls, obj) -> "LearnerSpec":
        """Parse ``{"kind": ..., "seed": ..., <hyperparameters>}`` or a bare kind string."""
        if isinstance(obj, LearnerSpec):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        if not isinstance(obj, dict) or "kind" not in obj:
            raise LearnerError(f"learner spec must be a kind string or an object with 'kind': {obj!r}")
        obj = dict(obj)
        kind = obj.pop("kind")
        seed = obj.pop("seed", 0)
        params = obj.pop("params", {})
        params = {**params, **obj}
        return cls(kind, params, seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.params}

    def with_seed(self, seed: int) -> "LearnerSpec":
        changed = {k: v for k, v in self.params.items() if v != DEFAULTS[self.kind][k]}
        return LearnerSpec(self.kind, changed, seed)

    def describe(self) -> str:
        changed = {k: v for k, v in self.params.items() if v != DEFAULTS[self.kind][k]}
        if not changed:
            return self.kind
        inner = ",".join(f"{k}={v}" for k, v in sorted(changed.items()))
        return f"{self.kind}({inner})"
