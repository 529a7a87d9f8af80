"""JSON-configurable estimator registry: the unit that benchmarks iterate over.

Config keys::

    {"family": "s" | "t" | "x" | "r" | "tarnet" | "cfrnet" | "dragonnet" | "naive" | "constant",
     "outcome_spec": ..., "treatment_spec": ..., "effect_spec": ..., "propensity_spec": ...,
     "weight": "propensity" | number, "folds": int, "net": {...}, "value": number, "name": str}
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .learners import LearnerSpec
from .metalearners import ConstantCate, fit_naive, fit_rdml, fit_s_learner, fit_t_learner, fit_x_learner
from .replearn import RepNetConfig, fit_repnet

FAMILY_ALIASES = {"dml": "r", "rlearner": "r", "slearner": "s", "tlearner": "t", "xlearner": "x"}

ALLOWED = {
    "s": {"outcome_spec"},
    "t": {"outcome_spec"},
    "x": {"outcome_spec", "effect_spec", "weight", "propensity_spec"},
    "r": {"outcome_spec", "treatment_spec", "effect_spec", "folds"},
    "tarnet": {"net"},
    "cfrnet": {"net"},
    "dragonnet": {"net"},
    "naive": set(),
    "constant": {"value"},
}


DISPLAY_NAMES = {
    "s": "S-learner",
    "t": "T-learner",
    "x": "X-learner",
    "r": "R-learner",
    "tarnet": "TARNet",
    "cfrnet": "CFRNet",
    "dragonnet": "DragonNet",
    "naive": "naive",
    "constant": "constant",
}


class EstimatorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    family: str
    options: dict = field(default_factory=dict)
    name: str = ""

    @classmethod
    def from_dict(cls, obj) -> "EstimatorConfig":
        if isinstance(obj, EstimatorConfig):
            return obj
        if not isinstance(obj, dict) or "family" not in obj:
            raise EstimatorConfigError(f"estimator config needs a 'family' key: {obj!r}")
        obj = dict(obj)
        family = str(obj.pop("family")).lower()
        family = FAMILY_ALIASES.get(family, family)
        if family not in ALLOWED:
            raise EstimatorConfigError(f"unknown estimator family {family!r}; expected one of {sorted(ALLOWED)}")
        name = obj.pop("name", "")
        unknown = set(obj) - ALLOWED[family]
        if unknown:
            raise EstimatorConfigError(f"{family}: unknown key(s) {sorted(unknown)}")
        # validate learner specs and nets early so config errors surface before fitting
        for key in ("outcome_spec", "treatment_spec", "propensity_spec"):
            if key in obj:
                LearnerSpec.from_dict(obj[key])
        if "effect_spec" in obj and obj["effect_spec"] not in ("ols", "ols-linear"):
            LearnerSpec.from_dict(obj["effect_spec"])
        if "net" in obj:
            RepNetConfig.from_dict(obj["net"])
        if family == "constant" and "value" not in obj:
            raise EstimatorConfigError("constant: needs a 'value'")
        return cls(family, obj, name)

    def to_dict(self) -> dict:
        d = {"family": self.family, **self.options}
        if self.name:
            d["name"] = self.name
        return d

    @property
    def id(self) -> str:
        return self.name or DISPLAY_NAMES[self.family]

    @property
    def base_learners(self) -> str:
        o = self.options

        def desc(key, default):
            v = o.get(key, default)
            if isinstance(v, str) and v in ("ols", "ols-linear"):
                return v
            return LearnerSpec.from_dict(v).describe()

        if self.family in ("s", "t"):
            return desc("outcome_spec", "linear")
        if self.family == "x":
            return f"outcome={desc('outcome_spec', 'linear')};effect={desc('effect_spec', 'linear')}"
        if self.family == "r":
            return (
                f"outcome={desc('outcome_spec', 'linear')};treatment={desc('treatment_spec', 'logistic')};"
                f"effect={desc('effect_spec', 'ols')}"
            )
        if self.family in ("tarnet", "cfrnet", "dragonnet"):
            net = RepNetConfig.from_dict(self.options.get("net", {}))
            return f"rep={list(net.rep_widths)};head={list(net.head_widths)}"
        if self.family == "constant":
            return f"value={o['value']}"
        return "arm-means"


def fit_estimator(config, dataset, seed: int = 0):
    """Fit the configured estimator; returns a CateModel."""
    cfg = EstimatorConfig.from_dict(config)
    o = cfg.options
    f = cfg.family
    if f == "s":
        return fit_s_learner(dataset, o.get("outcome_spec", "linear"), seed)
    if f == "t":
        return fit_t_learner(dataset, o.get("outcome_spec", "linear"), seed)
    if f == "x":
        return fit_x_learner(
            dataset,
            o.get("outcome_spec", "linear"),
            o.get("effect_spec", "linear"),
            o.get("weight", "propensity"),
            o.get("propensity_spec", "logistic"),
            seed,
        )
    if f == "r":
        return fit_rdml(
            dataset,
            o.get("outcome_spec", "linear"),
            o.get("treatment_spec", "logistic"),
            o.get("effect_spec", "ols"),
            int(o.get("folds", 2)),
            seed,
        )
    if f in ("tarnet", "cfrnet", "dragonnet"):
        net = dict(o.get("net", {}))
        net.setdefault("seed", seed)
        if f == "tarnet":
            net["ipm_weight"] = 0.0
        elif f == "cfrnet":
            net.setdefault("ipm_weight", 1.0)
        else:
            net["dragon"] = True
        return fit_repnet(dataset, RepNetConfig.from_dict(net))
    if f == "constant":
        return ConstantCate(float(o["value"]), {"family": "constant"})
    return fit_naive(dataset, seed)
