"""Propensity scores, AUROC, covariate balance and the IPTW ATE estimator."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .core import ObservationalDataset, PositivityError, atomic_write_text, derive_seeds, stratified_kfold_indices
from .learners import LearnerSpec, fit_classifier

DEFAULT_CLIP = (0.01, 0.99)


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class PropensityScores:
    scores: np.ndarray
    clip_bounds: tuple = DEFAULT_CLIP
    method: str = ""

    def __post_init__(self):
        lo, hi = self.clip_bounds
        if not 0 < lo < hi < 1:
            raise ValueError(f"clip bounds must satisfy 0 < lo < hi < 1, got {self.clip_bounds}")
        s = clip_scores(self.scores, self.clip_bounds)
        s.flags.writeable = False
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)

    def __array__(self, dtype=None, copy=None):
        return self.scores if dtype is None else self.scores.astype(dtype)


def clip_scores(scores, bounds=DEFAULT_CLIP) -> np.ndarray:
    lo, hi = bounds
    return np.clip(np.asarray(scores, dtype=float), lo, hi)


def _as_scores(scores):
    if isinstance(scores, PropensityScores):
        return scores.scores
    return np.asarray(scores, dtype=float)


def estimate_propensity(
    dataset: ObservationalDataset,
    classifier_spec="logistic",
    folds: int = 5,
    clip=DEFAULT_CLIP,
    seed: int = 0,
    out_of_fold: bool = True,
) -> PropensityScores:
    """Estimate P(T=1|X) with a classifier.

    With ``out_of_fold`` (default) every unit is scored by a model fit on the
    other folds (folds stratified by treatment); otherwise one in-sample fit.
    """
    dataset.require_both_arms("propensity estimation")
    spec = LearnerSpec.from_dict(classifier_spec)
    X, t = dataset.X, dataset.t.astype(float)
    if not out_of_fold:
        model = fit_classifier(spec, X, t)
        return PropensityScores(model.predict(X), tuple(clip), f"{spec.describe()} in-sample")
    n_treated = int(t.sum())
    k = min(folds, n_treated, dataset.n - n_treated)
    if k < 2:
        raise PositivityError("each arm needs at least two units for out-of-fold propensity")
    fold_seed, *fit_seeds = derive_seeds(seed, k + 1)
    fold = stratified_kfold_indices(dataset.t, k, fold_seed)
    out = np.empty(dataset.n)
    for j in range(k):
        test = fold == j
        model = fit_classifier(spec.with_seed(fit_seeds[j]), X[~test], t[~test])
        out[test] = model.predict(X[test])
    return PropensityScores(out, tuple(clip), f"{spec.describe()} {k}-fold")


def auroc(scores, treatment) -> float:
    """P(score of a random treated unit > score of a random control), ties count 1/2."""
    s = _as_scores(scores)
    t = np.asarray(treatment)
    if s.shape != t.shape:
        raise ValueError("scores and treatment length mismatch")
    n1 = int(np.sum(t == 1))
    n0 = int(np.sum(t == 0))
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUROC needs both treated and control units")
    ranks = rankdata(s)
    u = ranks[t == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


@dataclass(frozen=True)
class AteEstimate:
    value: float
    n: int
    method: str


def iptw_ate(dataset: ObservationalDataset, scores) -> AteEstimate:
    """``mean(T*Y/e - (1-T)*Y/(1-e))`` with the given (already clipped) scores."""
    e = _as_scores(scores)
    if len(e) != dataset.n:
        raise ValueError(f"scores length {len(e)} != dataset size {dataset.n}")
    if np.any((e <= 0) | (e >= 1)):
        raise ValueError("propensity scores must lie strictly inside (0, 1)")
    t, y = dataset.t, dataset.y
    value = float(np.mean(t * y / e - (1 - t) * y / (1 - e)))
    return AteEstimate(value, dataset.n, "iptw")


def naive_difference(dataset: ObservationalDataset) -> AteEstimate:
    dataset.require_both_arms("naive difference")
    t = dataset.t == 1
    return AteEstimate(float(dataset.y[t].mean() - dataset.y[~t].mean()), dataset.n, "naive-difference")


def iptw_weights(treatment, scores) -> np.ndarray:
    t = np.asarray(treatment)
    e = _as_scores(scores)
    return np.where(t == 1, 1.0 / e, 1.0 / (1.0 - e))


def _weighted_mean_var(x, w):
    m = np.average(x, axis=0, weights=w)
    v = np.average((x - m) ** 2, axis=0, weights=w)
    return m, v


def standardized_mean_difference(X, treatment, weights=None) -> np.ndarray:
    """(mean_treated - mean_control) / sqrt((var_treated + var_control) / 2).

    Population (ddof=0) variances; 0 where both arms are constant and equal.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(treatment) == 1
    w = np.ones(len(t)) if weights is None else np.asarray(weights, float)
    m1, v1 = _weighted_mean_var(X[t], w[t])
    m0, v0 = _weighted_mean_var(X[~t], w[~t])
    diff = m1 - m0
    pooled = np.sqrt((v1 + v0) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        smd = np.where(pooled > 0, diff / pooled, np.where(diff == 0, 0.0, np.sign(diff) * np.inf))
    return smd


def effective_sample_size(w) -> float:
    w = np.asarray(w, float)
    return float(w.sum() ** 2 / np.sum(w * w))


@dataclass(frozen=True)
class BalanceReport:
    feature_names: tuple
    smd_unweighted: np.ndarray
    smd_weighted: np.ndarray
    n_treated: int
    n_control: int
    ess_treated: float
    ess_control: float
    histogram: tuple  # rows of (arm, bin_lo, bin_hi, weight)

    def balance_csv(self) -> str:
        lines = ["feature,smd_unweighted,smd_weighted"]
        for name, a, b in zip(self.feature_names, self.smd_unweighted, self.smd_weighted):
            lines.append(f"{name},{float(a)!r},{float(b)!r}")
        return "\n".join(lines) + "\n"

    def histogram_csv(self) -> str:
        lines = ["arm,bin_lo,bin_hi,weight"]
        for arm, lo, hi, w in self.histogram:
            lines.append(f"{arm},{lo!r},{hi!r},{w!r}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / "balance.csv", self.balance_csv())
        atomic_write_text(out_dir / "propensity_hist.csv", self.histogram_csv())


def balance_report(dataset: ObservationalDataset, scores, bins: int = 20) -> BalanceReport:
    """SMD per feature before and after IPTW weighting, plus weighted score histograms."""
    e = _as_scores(scores)
    if len(e) != dataset.n:
        raise ValueError("scores length mismatch")
    t = dataset.t
    w = iptw_weights(t, e)
    edges = np.linspace(0.0, 1.0, bins + 1)
    hist = []
    for arm, mask in (("treated", t == 1), ("control", t == 0)):
        counts, _ = np.histogram(e[mask], bins=edges, weights=w[mask])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist.append((arm, float(lo), float(hi), float(c)))
    n1 = int(t.sum())
    return BalanceReport(
        dataset.feature_names,
        standardized_mean_difference(dataset.X, t),
        standardized_mean_difference(dataset.X, t, w),
        n1,
        dataset.n - n1,
        effective_sample_size(w[t == 1]) if n1 else 0.0,
        effective_sample_size(w[t == 0]) if n1 < dataset.n else 0.0,
        tuple(hist),
    )
