"""S-, T-, X-learners and the cross-fitted residual (DML / R-learner) estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ObservationalDataset, derive_seeds, kfold_indices
from .learners import LearnerError, LearnerSpec, fit_classifier, fit_mean_model, fit_regressor


class IdentificationError(ValueError):
    """Treatment residuals vanish: treatment is a deterministic function of X."""


class CateModel:
    """A fitted conditional-effect estimator. Subclasses implement ``predict_tau``."""

    family = "cate"

    def __init__(self, metadata: Optional[dict] = None):
        self.metadata = dict(metadata or {})
        self.metadata.setdefault("family", self.family)

    def predict_tau(self, X) -> np.ndarray:
        raise NotImplementedError

    def ate(self, X) -> float:
        return float(np.mean(self.predict_tau(X)))

    def __repr__(self):
        return f"{type(self).__name__}({self.metadata.get('family')})"


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def _min_rows(spec: LearnerSpec) -> int:
    if spec.kind == "forest":
        return max(2, int(spec.params["min_samples_leaf"]))
    return 2


def _arm_rows(dataset, spec, what):
    treated = dataset.t == 1
    need = _min_rows(spec)
    for name, mask in (("treated", treated), ("control", ~treated)):
        if mask.sum() < need:
            raise LearnerError(f"{what}: {name} arm has {int(mask.sum())} rows, {spec.kind} needs >= {need}")
    return treated


class ConstantCate(CateModel):
    """Same effect for every unit; the baseline for refit-stability checks."""

    family = "constant"

    def __init__(self, value: float, metadata=None):
        super().__init__(metadata)
        self.value = float(value)

    def predict_tau(self, X):
        return np.full(_as_2d(X).shape[0], self.value)


def fit_naive(dataset: ObservationalDataset, seed: int = 0) -> ConstantCate:
    """Difference of arm means, used as a constant effect."""
    dataset.require_both_arms("naive estimator")
    t = dataset.t == 1
    return ConstantCate(dataset.y[t].mean() - dataset.y[~t].mean(), {"family": "naive", "seed": seed})


# ---------------------------------------------------------------------------
# S-learner
# ---------------------------------------------------------------------------

class SLearner(CateModel):
    family = "s"

    def __init__(self, model, metadata):
        super().__init__(metadata)
        self.model = model

    def predict_tau(self, X):
        X = _as_2d(X)
        ones = np.ones((X.shape[0], 1))
        return self.model.predict(np.hstack([X, ones])) - self.model.predict(np.hstack([X, 0 * ones]))


def fit_s_learner(dataset: ObservationalDataset, outcome_spec="linear", seed: int = 0) -> SLearner:
    """One outcome model on ``[X, T]``; effect = mu(x, 1) - mu(x, 0)."""
    dataset.require_both_arms("S-learner")
    spec = LearnerSpec.from_dict(outcome_spec)
    spec = spec.with_seed(derive_seeds(seed, 1)[0])
    XT = np.hstack([dataset.X, dataset.t[:, None].astype(float)])
    model = fit_mean_model(spec, XT, dataset.y)
    return SLearner(model, {"outcome_spec": spec.to_dict(), "seed": seed, "standardize": spec.params.get("standardize")})


# ---------------------------------------------------------------------------
# T-learner
# ---------------------------------------------------------------------------

class TLearner(CateModel):
    family = "t"

    def __init__(self, mu0, mu1, metadata):
        super().__init__(metadata)
        self.mu0 = mu0
        self.mu1 = mu1

    def predict_tau(self, X):
        X = _as_2d(X)
        return self.mu1.predict(X) - self.mu0.predict(X)


def _fit_arms(dataset, spec, seed, what):
    treated = _arm_rows(dataset, spec, what)
    s0, s1 = derive_seeds(seed, 2)
    mu0 = fit_mean_model(spec.with_seed(s0), dataset.X[~treated], dataset.y[~treated])
    mu1 = fit_mean_model(spec.with_seed(s1), dataset.X[treated], dataset.y[treated])
    return treated, mu0, mu1


def fit_t_learner(dataset: ObservationalDataset, outcome_spec="linear", seed: int = 0) -> TLearner:
    """Separate outcome models per arm; effect = mu1(x) - mu0(x)."""
    dataset.require_both_arms("T-learner")
    spec = LearnerSpec.from_dict(outcome_spec)
    _, mu0, mu1 = _fit_arms(dataset, spec, seed, "T-learner")
    return TLearner(mu0, mu1, {"outcome_spec": spec.to_dict(), "seed": seed})


# ---------------------------------------------------------------------------
# X-learner
# ---------------------------------------------------------------------------

@dataclass
class XLearnerState:
    mu0: object
    mu1: object
    tau0: object  # effect model fit on control rows
    tau1: object  # effect model fit on treated rows
    weight: object  # float constant or a fitted propensity classifier
    pseudo_treated: np.ndarray = field(repr=False, default=None)
    pseudo_control: np.ndarray = field(repr=False, default=None)

    def w(self, X) -> np.ndarray:
        if isinstance(self.weight, float):
            return np.full(X.shape[0], self.weight)
        return np.clip(self.weight.predict(X), 0.0, 1.0)


class XLearner(CateModel):
    family = "x"

    def __init__(self, state: XLearnerState, metadata):
        super().__init__(metadata)
        self.state = state

    def predict_tau(self, X):
        X = _as_2d(X)
        w = self.state.w(X)
        return w * self.state.tau0.predict(X) + (1.0 - w) * self.state.tau1.predict(X)


def fit_x_learner(
    dataset: ObservationalDataset,
    outcome_spec="linear",
    effect_spec="linear",
    weight="propensity",
    propensity_spec="logistic",
    seed: int = 0,
) -> XLearner:
    """T-learner outcome models, imputed per-unit effects, arm-wise effect models.

    Treated rows get ``Y - mu0(X)``, control rows ``mu1(X) - Y``; the two effect
    models are blended as ``w(x) * tau0(x) + (1 - w(x)) * tau1(x)``.
    ``weight`` is ``"propensity"`` (estimated P(T=1|x)) or a constant in [0, 1].
    """
    dataset.require_both_arms("X-learner")
    out_spec = LearnerSpec.from_dict(outcome_spec)
    eff_spec = LearnerSpec.from_dict(effect_spec)
    s_arms, s_t0, s_t1, s_w = derive_seeds(seed, 4)
    treated, mu0, mu1 = _fit_arms(dataset, out_spec, s_arms, "X-learner")
    X, y = dataset.X, dataset.y
    d1 = y[treated] - mu0.predict(X[treated])
    d0 = mu1.predict(X[~treated]) - y[~treated]
    _arm_rows(dataset, eff_spec, "X-learner effect models")
    tau1 = fit_regressor(eff_spec.with_seed(s_t1), X[treated], d1)
    tau0 = fit_regressor(eff_spec.with_seed(s_t0), X[~treated], d0)
    if isinstance(weight, str):
        if weight != "propensity":
            raise ValueError(f"weight must be 'propensity' or a number in [0, 1], got {weight!r}")
        p_spec = LearnerSpec.from_dict(propensity_spec)
        w = fit_classifier(p_spec.with_seed(s_w), X, dataset.t.astype(float))
        weight_meta = {"propensity_spec": p_spec.to_dict()}
    else:
        w = float(weight)
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"constant weight must lie in [0, 1], got {w}")
        weight_meta = {"constant": w}
    state = XLearnerState(mu0, mu1, tau0, tau1, w, d1, d0)
    meta = {"outcome_spec": out_spec.to_dict(), "effect_spec": eff_spec.to_dict(), "weight": weight_meta, "seed": seed}
    return XLearner(state, meta)


# ---------------------------------------------------------------------------
# Residual-on-residual (DML / R-learner)
# ---------------------------------------------------------------------------

@dataclass
class NuisancePair:
    """Cross-fitted nuisance predictions with their fold bookkeeping.

    ``outcome_models[k]`` and ``treatment_models[k]`` were trained on the rows
    with ``folds != k`` and scored the rows with ``folds == k``.
    """

    q_hat: np.ndarray
    f_hat: np.ndarray
    folds: np.ndarray
    outcome_models: list
    treatment_models: list
    train_rows: list

    def check_hygiene(self) -> bool:
        """True iff no unit was scored by a model that saw it in training."""
        for k, rows in enumerate(self.train_rows):
            scored = np.flatnonzero(self.folds == k)
            if np.intersect1d(rows, scored).size:
                return False
        return True


def _fit_treatment_model(spec, X, t):
    if spec.kind == "linear":
        return fit_regressor(spec, X, t)
    return fit_classifier(spec, X, t)


def cross_fit_nuisances(dataset, outcome_spec, treatment_spec, folds=2, seed=0, max_refolds=5) -> NuisancePair:
    """Out-of-fold E[Y|X] and E[T|X].

    A fold split whose training part lacks an arm is redrawn with a fresh
    derived seed, at most ``max_refolds`` times.
    """
    out_spec = LearnerSpec.from_dict(outcome_spec)
    trt_spec = LearnerSpec.from_dict(treatment_spec)
    n = dataset.n
    seeds = derive_seeds(seed, max_refolds + 1 + 2 * folds)
    fold_seeds, fit_seeds = seeds[: max_refolds + 1], seeds[max_refolds + 1:]
    for attempt in range(max_refolds + 1):
        fold = kfold_indices(n, folds, fold_seeds[attempt])
        if all(len(np.unique(dataset.t[fold != k])) == 2 for k in range(folds)):
            break
    else:
        raise LearnerError(f"could not draw {folds} folds with both arms in every training part")
    q_hat = np.empty(n)
    f_hat = np.empty(n)
    q_models, f_models, train_rows = [], [], []
    X, y, t = dataset.X, dataset.y, dataset.t.astype(float)
    for k in range(folds):
        tr = np.flatnonzero(fold != k)
        te = np.flatnonzero(fold == k)
        q = fit_mean_model(out_spec.with_seed(fit_seeds[2 * k]), X[tr], y[tr])
        f = _fit_treatment_model(trt_spec.with_seed(fit_seeds[2 * k + 1]), X[tr], t[tr])
        q_hat[te] = q.predict(X[te])
        f_hat[te] = f.predict(X[te])
        q_models.append(q)
        f_models.append(f)
        train_rows.append(tr)
    return NuisancePair(q_hat, f_hat, fold, q_models, f_models, train_rows)


class ResidualLearner(CateModel):
    family = "r"

    def __init__(self, effect, kind, nuisances: NuisancePair, metadata):
        super().__init__(metadata)
        self.effect = effect
        self.kind = kind
        self.nuisances = nuisances

    def predict_tau(self, X):
        X = _as_2d(X)
        if self.kind == "ols":
            return np.full(X.shape[0], float(self.effect))
        if self.kind == "ols-linear":
            return self.effect[0] + X @ self.effect[1:]
        return self.effect.predict(X)


def residual_ols(y_res, t_res, X=None) -> np.ndarray:
    """Least-squares ``tau`` minimizing ``sum (y_res - tau(X) * t_res)^2``.

    With ``X=None`` tau is a scalar, ``sum(y_res t_res) / sum(t_res^2)``;
    otherwise ``tau(x) = b0 + b'x`` (regress ``y_res`` on ``t_res * [1, X]``).
    """
    if X is None:
        return np.array(np.sum(y_res * t_res) / np.sum(t_res * t_res))
    D = t_res[:, None] * np.hstack([np.ones((X.shape[0], 1)), X])
    return np.linalg.lstsq(D, y_res, rcond=None)[0]


def fit_rdml(
    dataset: ObservationalDataset,
    outcome_spec="linear",
    treatment_spec="logistic",
    effect="ols",
    folds: int = 2,
    seed: int = 0,
) -> ResidualLearner:
    """Cross-fitted residualization, then a least-squares effect fit.

    ``effect``: ``"ols"`` (constant effect), ``"ols-linear"`` (effect linear in
    X), or a learner spec, which is fit to ``Y_res / T_res`` with weights
    ``T_res^2`` (the R-learner path).
    """
    if folds < 2:
        raise ValueError("cross-fitting needs folds >= 2")
    dataset.require_both_arms("DML")
    nu = cross_fit_nuisances(dataset, outcome_spec, treatment_spec, folds, seed)
    y_res = dataset.y - nu.q_hat
    t_res = dataset.t - nu.f_hat
    if np.mean(t_res * t_res) < 1e-8:
        raise IdentificationError("treatment residuals are all ~0; treatment is fully explained by X")
    meta = {
        "outcome_spec": LearnerSpec.from_dict(outcome_spec).to_dict(),
        "treatment_spec": LearnerSpec.from_dict(treatment_spec).to_dict(),
        "folds": folds,
        "seed": seed,
    }
    if effect in ("ols", "ols-linear"):
        coef = residual_ols(y_res, t_res, None if effect == "ols" else dataset.X)
        meta["effect"] = effect
        return ResidualLearner(coef, effect, nu, meta)
    spec = LearnerSpec.from_dict(effect)
    weight = t_res * t_res
    safe = np.where(np.abs(t_res) > 1e-12, t_res, 1e-12)
    pseudo = y_res / safe
    model = fit_regressor(spec.with_seed(derive_seeds(seed, 3)[2]), dataset.X, pseudo, sample_weight=weight)
    meta["effect"] = spec.to_dict()
    return ResidualLearner(model, "flexible", nu, meta)
