"""Synthetic data-generating processes with known potential outcomes.

Every generator returns an :class:`ObservationalDataset` whose ``truth``
holds the conditional means of both potential outcomes, so PEHE can be
computed against the true conditional effect.
"""

from __future__ import annotations

import inspect

import numpy as np
from scipy.special import expit

from .core import GroundTruth, ObservationalDataset, rng_from


def _finish(X, e, mu0, mu1, noise, rng, name, params, binary_outcome=False):
    n = X.shape[0]
    t = (rng.uniform(size=n) < e).astype(int)
    if binary_outcome:
        p = np.where(t == 1, mu1, mu0)
        y = (rng.uniform(size=n) < p).astype(float)
    else:
        y = np.where(t == 1, mu1, mu0) + noise * rng.normal(size=n)
    meta = {"generator": name, **params}
    return ObservationalDataset(X, t, y, truth=GroundTruth(mu0, mu1, e), metadata=meta)


def linear(n=1000, d=5, seed=0, noise=0.0, treated_fraction=0.5):
    """Randomized design, linear baseline, linear effect ``1 + x0 - 0.5*x1``."""
    rng = rng_from(seed)
    X = rng.normal(size=(n, d))
    beta = np.linspace(1.0, -1.0, d)
    mu0 = X @ beta
    tau = 1.0 + X[:, 0] - (0.5 * X[:, 1] if d > 1 else 0.0)
    e = np.full(n, treated_fraction)
    return _finish(X, e, mu0, mu0 + tau, noise, rng, "linear", dict(n=n, d=d, seed=seed, noise=noise, treated_fraction=treated_fraction))


def confounded(n=2000, d=5, seed=0, ate=1.0, strength=1.0, noise=1.0):
    """Constant effect ``ate``; ``x0`` drives both treatment and outcome.

    ``e(x) = expit(strength * x0)`` and ``E[Y(0)|x] = x0 + 0.5*x1``, so the
    naive arm difference is biased upward by ``E[x0|T=1] - E[x0|T=0]``.
    """
    rng = rng_from(seed)
    X = rng.normal(size=(n, d))
    e = expit(strength * X[:, 0])
    mu0 = X[:, 0] + (0.5 * X[:, 1] if d > 1 else 0.0)
    return _finish(X, e, mu0, mu0 + ate, noise, rng, "confounded", dict(n=n, d=d, seed=seed, ate=ate, strength=strength, noise=noise))


def confounded_naive_bias(strength=1.0, draws=2_000_000, seed=12345):
    """Population bias of the naive difference for :func:`confounded` (Monte-Carlo)."""
    x0 = np.random.default_rng(seed).normal(size=draws)
    e = expit(strength * x0)
    return float(np.sum(e * x0) / np.sum(e) - np.sum((1 - e) * x0) / np.sum(1 - e))


def partially_linear(n=5000, d=5, seed=0, tau=0.5, noise=1.0, confounding=1.0):
    """``Y = tau*T + g(X) + eps`` with ``T ~ Bernoulli(f(X))`` and nonlinear g, f."""
    rng = rng_from(seed)
    X = rng.normal(size=(n, d))
    g = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2 + (0.5 * X[:, 2] if d > 2 else 0.0)
    e = expit(confounding * (0.8 * X[:, 0] - 0.4 * (X[:, 1] ** 2 - 1)))
    e = np.clip(e, 0.05, 0.95)
    return _finish(X, e, g, g + tau, noise, rng, "partially_linear", dict(n=n, d=d, seed=seed, tau=tau, noise=noise, confounding=confounding))


def heterogeneous(n=2000, d=6, seed=0, treated_fraction=0.5, noise=0.5, confounding=0.0, effect="nonlinear"):
    """Heterogeneous effect on uniform covariates.

    ``effect="nonlinear"``: ``tau = 2 / (1 + exp(-8 (x0 - 0.5)))`` style step
    in ``x0`` plus ``0.5 * x1``. ``effect="linear"``: ``tau = 1 + 2 x0 - x1``.
    Treatment is Bernoulli with log-odds ``logit(treated_fraction) + confounding * (x2 - 0.5) * 4``.
    """
    rng = rng_from(seed)
    X = rng.uniform(size=(n, d))
    mu0 = 2.0 * X[:, 2] + np.sin(np.pi * X[:, 3]) + (X[:, 4] - 0.5) ** 2 * 2
    if effect == "linear":
        tau = 1.0 + 2.0 * X[:, 0] - X[:, 1]
    else:
        tau = 2.0 * expit(8.0 * (X[:, 0] - 0.5)) + 0.5 * X[:, 1]
    base = np.log(treated_fraction / (1 - treated_fraction))
    e = expit(base + confounding * 4.0 * (X[:, 2] - 0.5))
    e = np.clip(e, 0.01, 0.99)
    return _finish(X, e, mu0, mu0 + tau, noise, rng, "heterogeneous",
                   dict(n=n, d=d, seed=seed, treated_fraction=treated_fraction, noise=noise, confounding=confounding, effect=effect))


def imbalanced(n=2000, d=5, seed=0, treated_fraction=0.05, noise=0.5):
    """Few treated units, complex baseline, simple (linear) effect."""
    rng = rng_from(seed)
    X = rng.uniform(-1, 1, size=(n, d))
    mu0 = 3.0 * np.sin(2.0 * X[:, 0]) + 2.0 * X[:, 1] ** 2 + np.where(X[:, 2] > 0, 1.5, -1.5) + X[:, 3] * X[:, 4] * 2
    tau = 1.0 + 0.5 * X[:, 0]
    e = np.full(n, treated_fraction)
    return _finish(X, e, mu0, mu0 + tau, noise, rng, "imbalanced", dict(n=n, d=d, seed=seed, treated_fraction=treated_fraction, noise=noise))


def binary_outcome(n=2000, d=5, seed=0, confounding=1.0):
    """Bernoulli outcomes; ``truth`` holds the outcome probabilities."""
    rng = rng_from(seed)
    X = rng.normal(size=(n, d))
    p0 = expit(-0.5 + 0.8 * X[:, 0] - 0.5 * X[:, 1])
    p1 = expit(-0.5 + 0.8 * X[:, 0] - 0.5 * X[:, 1] - 0.8 + 0.6 * X[:, 2])
    e = np.clip(expit(confounding * 0.7 * X[:, 0]), 0.02, 0.98)
    return _finish(X, e, p0, p1, 0.0, rng, "binary_outcome", dict(n=n, d=d, seed=seed, confounding=confounding), binary_outcome=True)


GENERATORS = {
    "linear": linear,
    "confounded": confounded,
    "partially_linear": partially_linear,
    "heterogeneous": heterogeneous,
    "imbalanced": imbalanced,
    "binary_outcome": binary_outcome,
}


def generator_params(name) -> set:
    return set(inspect.signature(GENERATORS[name]).parameters)


def generate(name: str, **params) -> ObservationalDataset:
    if name not in GENERATORS:
        raise KeyError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    unknown = set(params) - generator_params(name)
    if unknown:
        raise TypeError(f"generator {name!r} got unknown parameter(s) {sorted(unknown)}")
    return GENERATORS[name](**params)
