"""Model-selection metrics: PEHE, ERMSE and the influence-function PEHE estimate.

IF-PEHE works in two steps. Step 1 fits nuisances once per evaluation set
(boosted outcome models for mu1 and mu0, a forest for the propensity) and
freezes them in an :class:`IfPeheContext`. Step 2 scores any number of
candidates against that context::

    IF-PEHE = (1/n) sum_i [ (T_hat - T_bar)^2 + l1_i ]
    l1_i    = (1 - B) T_bar^2 + B Y (T_bar - T_hat) - A (T_bar - T_hat)^2 + T_hat^2

with ``A = W - pi``, ``C = pi (1 - pi)`` and ``B = 2 W (W - pi) / C``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DatasetError, ObservationalDataset, derive_seeds
from .estimators import EstimatorConfig, fit_estimator
from .learners import LearnerSpec, fit_classifier, fit_mean_model
from .propensity import clip_scores

IF_PEHE_OUTCOME_SPEC = {"kind": "boosted-stumps", "n_estimators": 200, "max_depth": 1, "learning_rate": 0.1}
IF_PEHE_PROPENSITY_SPEC = {"kind": "forest", "n_trees": 100}
IF_PEHE_CLIP = (0.01, 0.99)
CONVENTION = "A=W-pi; C=pi(1-pi); B=2W(W-pi)/C"


class MissingGroundTruthError(DatasetError):
    pass


def pehe(tau_hat, tau_true) -> float:
    """Mean squared error between estimated and true CATE."""
    if tau_true is None:
        raise MissingGroundTruthError("pehe needs the true effects")
    a = np.asarray(tau_hat, dtype=float).ravel()
    b = np.asarray(tau_true, dtype=float).ravel()
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} estimates vs {len(b)} true effects")
    if len(a) == 0:
        raise ValueError("pehe of an empty sample")
    return float(np.mean((a - b) ** 2))


def sqrt_pehe(tau_hat, tau_true) -> float:
    return math.sqrt(pehe(tau_hat, tau_true))


def dataset_pehe(model, dataset: ObservationalDataset) -> float:
    if dataset.truth is None:
        raise MissingGroundTruthError("dataset carries no ground truth")
    return pehe(model.predict_tau(dataset.X), dataset.truth.tau)


def ermse(estimator_config, train_set: ObservationalDataset, test_set: ObservationalDataset, seed: int = 0) -> float:
    """Refit stability: RMSE between tau predictions on test X of the same
    estimator fit once on ``train_set`` and once on ``test_set``."""
    return _ermse_given(fit_estimator(estimator_config, train_set, seed), estimator_config, test_set, seed)


def _ermse_given(m_train, estimator_config, test_set, seed):
    m_test = fit_estimator(estimator_config, test_set, seed)
    gap = m_train.predict_tau(test_set.X) - m_test.predict_tau(test_set.X)
    return float(np.sqrt(np.mean(gap**2)))


def _fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class IfPeheContext:
    """Frozen Step-1 nuisances for one evaluation set."""

    X: np.ndarray
    w: np.ndarray
    y: np.ndarray
    t_bar: np.ndarray
    pi: np.ndarray
    degenerate_propensity: bool = False
    convention: str = CONVENTION

    def __post_init__(self):
        for a in (self.X, self.w, self.y, self.t_bar, self.pi):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def A(self):
        return self.w - self.pi

    @property
    def C(self):
        return self.pi * (1 - self.pi)

    @property
    def B(self):
        return 2 * self.w * (self.w - self.pi) / self.C

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.X, self.w, self.y, self.t_bar, self.pi)

    @classmethod
    def from_arrays(cls, X, w, y, t_bar, pi, clip=IF_PEHE_CLIP):
        """Build a context from precomputed nuisances (used for fixtures)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        pi_raw = np.asarray(pi, dtype=float).ravel()
        pi_c = clip_scores(pi_raw, clip)
        degenerate = bool(np.all((pi_raw <= clip[0]) | (pi_raw >= clip[1])))
        return cls(
            X.copy(),
            np.asarray(w, dtype=float).ravel().copy(),
            np.asarray(y, dtype=float).ravel().copy(),
            np.asarray(t_bar, dtype=float).ravel().copy(),
            pi_c.copy(),
            degenerate,
        )


def build_if_pehe_context(
    eval_set: ObservationalDataset,
    seed: int = 0,
    outcome_spec=IF_PEHE_OUTCOME_SPEC,
    propensity_spec=IF_PEHE_PROPENSITY_SPEC,
    clip=IF_PEHE_CLIP,
) -> IfPeheContext:
    """Step 1: fit mu1, mu0 per arm and pi on the evaluation set."""
    eval_set.require_both_arms()
    s_mu1, s_mu0, s_pi = derive_seeds(seed, 3)
    X, t, y = eval_set.X, eval_set.t, eval_set.y
    out = LearnerSpec.from_dict(outcome_spec)
    # outcome models are classifiers for 0/1 outcomes, regressors otherwise
    mu1 = fit_mean_model(out.with_seed(s_mu1), X[t == 1], y[t == 1]).predict(X)
    mu0 = fit_mean_model(out.with_seed(s_mu0), X[t == 0], y[t == 0]).predict(X)
    pi = fit_classifier(LearnerSpec.from_dict(propensity_spec).with_seed(s_pi), X, t).predict(X)
    return IfPeheContext.from_arrays(X, t, y, mu1 - mu0, pi, clip)


def if_pehe_terms(tau_hat, context: IfPeheContext) -> np.ndarray:
    """Per-unit contributions ``(T_hat - T_bar)^2 + l1``; their mean is IF-PEHE."""
    th = np.asarray(tau_hat, dtype=float).ravel()
    if len(th) != context.n:
        raise ValueError(f"expected {context.n} predictions, got {len(th)}")
    tb = context.t_bar
    A, B = context.A, context.B
    diff = tb - th
    l1 = (1 - B) * tb**2 + B * context.y * diff - A * diff**2 + th**2
    return diff**2 + l1


def if_pehe(candidate, eval_set, seed: int = 0) -> float:
    """IF-PEHE of a fitted CATE model.

    ``eval_set`` may be an :class:`IfPeheContext` (reused as is) or a dataset,
    in which case the context is built first.
    """
    ctx = eval_set if isinstance(eval_set, IfPeheContext) else build_if_pehe_context(eval_set, seed)
    return float(np.mean(if_pehe_terms(candidate.predict_tau(ctx.X), ctx)))


METRICS = ("pehe", "ermse", "if_pehe")


@dataclass
class EvaluationReport:
    """One row of a benchmark report. Metrics not requested stay ``None``;
    a failed fit keeps its error text and no metrics."""

    estimator: str
    base_learners: str
    n_eval: int
    ermse: float | None = None
    if_pehe: float | None = None
    pehe: float | None = None
    flags: list = field(default_factory=list)
    error: str = ""

    def __post_init__(self):
        if self.ermse is not None and self.ermse < 0:
            raise ValueError("ermse must be non-negative")
        if self.pehe is not None and self.pehe < 0:
            raise ValueError("pehe must be non-negative")

    @property
    def sqrt_pehe(self):
        return None if self.pehe is None else math.sqrt(self.pehe)

    def row(self) -> dict:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return {
            "estimator": self.estimator,
            "base_learners": self.base_learners,
            "ermse": fmt(self.ermse),
            "if_pehe": fmt(self.if_pehe),
            "pehe": fmt(self.pehe),
            "sqrt_pehe": fmt(self.sqrt_pehe),
            "flags": ";".join(self.flags),
            "error": self.error,
        }


REPORT_COLUMNS = ["estimator", "base_learners", "ermse", "if_pehe", "pehe", "sqrt_pehe", "flags", "error"]


def evaluate(estimator_config, train_set, test_set, context: IfPeheContext | None = None, seed: int = 0,
             metrics=METRICS):
    """Fit on train, score on test; returns ``(EvaluationReport, fitted_model)``."""
    cfg = EstimatorConfig.from_dict(estimator_config)
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metric(s) {sorted(unknown)}; expected a subset of {list(METRICS)}")
    if "pehe" in metrics and test_set.truth is None:
        raise MissingGroundTruthError("pehe requested but the evaluation set has no ground truth")
    if "if_pehe" in metrics and context is None:
        context = build_if_pehe_context(test_set, seed)
    model = fit_estimator(cfg, train_set, seed)
    tau_test = model.predict_tau(test_set.X)
    report = EvaluationReport(cfg.id, cfg.base_learners, test_set.n)
    if "ermse" in metrics:
        report.ermse = _ermse_given(model, cfg, test_set, seed)
    if "if_pehe" in metrics:
        report.if_pehe = float(np.mean(if_pehe_terms(tau_test, context)))
        if context.degenerate_propensity:
            report.flags.append("degenerate-propensity")
    if "pehe" in metrics:
        report.pehe = pehe(tau_test, test_set.truth.tau)
    return report, model


def sort_reports(reports):
    """Ascending IF-PEHE; rows without a value (failed or not requested) go
    last, and ties keep configuration order."""
    return sorted(reports, key=lambda r: (r.if_pehe is None, r.if_pehe if r.if_pehe is not None else 0.0))


def report_csv(reports) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for r in reports:
        wr.writerow(r.row())
    return buf.getvalue()
