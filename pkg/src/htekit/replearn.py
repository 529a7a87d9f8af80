"""Shared-representation neural effect estimators: TARNet, CFRNet and DragonNet.

A representation network ``phi`` feeds two outcome heads (one per arm). CFRNet
adds ``ipm_weight * MMD^2`` between the treated and control representations;
DragonNet adds a propensity head on ``phi`` and a targeted-regularization term
with a learnable perturbation ``epsilon``.

Loss on a batch of ``m`` rows::

    factual  = (1/m) sum_i w_i (yhat_i - y_i)^2,  w = t/(2u) + (1-t)/(2(1-u))
    ipm      = MMD^2(phi(X[t=1]), phi(X[t=0]))
    prop     = (1/m) sum_i BCE(g_i, t_i)
    targeted = (1/m) sum_i (y_i - yhat_i - epsilon * (t_i/g_i - (1-t_i)/(1-g_i)))^2
    total    = factual + ipm_weight * ipm + alpha * prop + beta * targeted

``u`` is the treated fraction of the training set and ``g`` the propensity
head squashed into [0.01/1.02, 1.01/1.02].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import ObservationalDataset, atomic_write_text, derive_seeds
from .learners.linear import Standardizer, _log1pexp, _sigmoid
from .learners.mlp import Dense, max_relative_error, numeric_gradient
from .metalearners import CateModel


class TrainingError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IpmValue:
    value: float
    kernel: str
    n_a: int
    n_b: int

    def __float__(self):
        return self.value


def median_bandwidth(Z) -> float:
    """Median pairwise Euclidean distance (1.0 if it is zero)."""
    Z = np.asarray(Z, dtype=float)
    sq = np.sum(Z * Z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T, 0.0)
    iu = np.triu_indices(len(Z), k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.sqrt(np.median(d2[iu])))
    return med if med > 0 else 1.0


def _rbf(P, Q, sigma):
    d2 = np.sum(P * P, 1)[:, None] + np.sum(Q * Q, 1)[None, :] - 2.0 * P @ Q.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * sigma * sigma))


def _rbf_grad(P, Q, K, sigma):
    # sum_l dk(p_i, q_l)/dp_i
    return -(K.sum(axis=1)[:, None] * P - K @ Q) / (sigma * sigma)


def mmd_and_grad(A, B, kernel="rbf", bandwidth: Union[str, float] = "median"):
    """Biased (V-statistic) MMD^2 and its gradients w.r.t. ``A`` and ``B``.

    The RBF bandwidth is treated as a constant, even when it comes from the
    median heuristic.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    ma, mb = len(A), len(B)
    if kernel == "linear":
        diff = A.mean(axis=0) - B.mean(axis=0)
        return float(diff @ diff), np.tile(2.0 * diff / ma, (ma, 1)), np.tile(-2.0 * diff / mb, (mb, 1))
    sigma = median_bandwidth(np.vstack([A, B])) if bandwidth == "median" else float(bandwidth)
    Kaa = _rbf(A, A, sigma)
    Kbb = _rbf(B, B, sigma)
    Kab = _rbf(A, B, sigma)
    value = Kaa.mean() + Kbb.mean() - 2.0 * Kab.mean()
    gA = 2.0 / ma**2 * _rbf_grad(A, A, Kaa, sigma) - 2.0 / (ma * mb) * _rbf_grad(A, B, Kab, sigma)
    gB = 2.0 / mb**2 * _rbf_grad(B, B, Kbb, sigma) - 2.0 / (ma * mb) * _rbf_grad(B, A, Kab.T, sigma)
    return float(value), gA, gB


def mmd(sample_a, sample_b, kernel="rbf", bandwidth: Union[str, float] = "median") -> IpmValue:
    """``mean k(a,a') + mean k(b,b') - 2 mean k(a,b)``, floored at 0."""
    A = np.atleast_2d(np.asarray(sample_a, dtype=float))
    B = np.atleast_2d(np.asarray(sample_b, dtype=float))
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    if len(A) < 1 or len(B) < 1:
        raise ValueError("both samples need at least one row")
    if kernel not in ("rbf", "linear"):
        raise ValueError(f"unknown kernel {kernel!r}")
    value, _, _ = mmd_and_grad(A, B, kernel, bandwidth)
    return IpmValue(max(value, 0.0), kernel, len(A), len(B))


# ---------------------------------------------------------------------------
# Config and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RepNetConfig:
    rep_widths: tuple = (32, 32)
    head_widths: tuple = (16,)
    ipm_weight: float = 0.0
    kernel: str = "rbf"
    bandwidth: Union[str, float] = "median"
    dragon: bool = False
    alpha: float = 1.0
    beta: float = 1.0
    epochs: int = 300
    lr: float = 0.01
    batch_size: int = 128
    activation: str = "tanh"
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rep_widths", tuple(int(w) for w in self.rep_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if not self.rep_widths or any(w < 1 for w in self.rep_widths + self.head_widths):
            raise ConfigError("layer widths must be >= 1 and the representation needs a layer")
        if self.ipm_weight < 0:
            raise ConfigError("ipm_weight must be >= 0")
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.bandwidth != "median" and not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
            raise ConfigError("bandwidth must be 'median' or a positive number")
        if self.dragon and self.alpha <= 0:
            raise ConfigError("dragon needs alpha > 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError("activation must be 'tanh' or 'relu'")

    @classmethod
    def from_dict(cls, obj: dict) -> "RepNetConfig":
        obj = dict(obj or {})
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown network option(s) {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rep_widths"] = list(self.rep_widths)
        d["head_widths"] = list(self.head_widths)
        return d


class _Net:
    """Parameter container: representation, two heads, propensity head, epsilon."""

    def __init__(self, d, config: RepNetConfig, rng):
        act = config.activation
        self.phi = Dense([d, *config.rep_widths], act, act, rng)
        r = config.rep_widths[-1]
        self.heads = [Dense([r, *config.head_widths, 1], act, "identity", rng) for _ in range(2)]
        self.prop = Dense([r, 1], act, "identity", rng) if config.dragon else None
        self.epsilon = np.zeros(1)

    @property
    def params(self):
        ps = list(self.phi.params) + self.heads[0].params + self.heads[1].params
        if self.prop is not None:
            ps += self.prop.params + [self.epsilon]
        return ps


def _squash(s):
    return (s + 0.01) / 1.02


def _loss_and_grad(net: _Net, config: RepNetConfig, X, t, y, u, bandwidth=None):
    """Loss terms and gradients for one batch (``t`` as 0/1 floats)."""
    m = X.shape[0]
    H, phi_acts = net.phi.forward(X)
    treated = t == 1
    yhat = np.empty(m)
    head_acts = []
    for arm, mask in ((0, ~treated), (1, treated)):
        if mask.any():
            out, acts = net.heads[arm].forward(H[mask])
            yhat[mask] = out[:, 0]
            head_acts.append((arm, mask, acts))
    w = np.where(treated, 1.0 / (2.0 * u), 1.0 / (2.0 * (1.0 - u)))
    r = yhat - y
    factual = float(np.mean(w * r * r))
    g_yhat = 2.0 * w * r / m
    g_H = np.zeros_like(H)
    terms = {"factual_loss": factual, "mmd": 0.0, "propensity_loss": 0.0, "targeted_term": 0.0}
    grads_eps = None
    g_prop_params = None

    if config.dragon:
        z_out, prop_acts = net.prop.forward(H)
        z = z_out[:, 0]
        s = _sigmoid(z)
        g = _squash(s)
        prop_loss = float(np.mean(_log1pexp(z) - t * z))
        terms["propensity_loss"] = prop_loss
        g_z = config.alpha * (s - t) / m
        h = t / g - (1.0 - t) / (1.0 - g)
        eps = float(net.epsilon[0])
        resid = y - yhat - eps * h
        terms["targeted_term"] = float(np.mean(resid * resid))
        c = -2.0 * config.beta * resid / m
        g_yhat = g_yhat + c
        grads_eps = np.array([float(np.sum(c * h))])
        dh_dg = -t / g**2 - (1.0 - t) / (1.0 - g) ** 2
        g_z = g_z + c * eps * dh_dg * s * (1.0 - s) / 1.02
        g_prop_params, gH_prop = net.prop.backward(prop_acts, g_z[:, None])
        g_H += gH_prop

    head_grads = [[np.zeros_like(p) for p in hd.params] for hd in net.heads]
    for arm, mask, acts in head_acts:
        gp, gH_arm = net.heads[arm].backward(acts, g_yhat[mask][:, None])
        head_grads[arm] = gp
        g_H[mask] += gH_arm

    if treated.any() and (~treated).any():
        # tracked even when ipm_weight == 0 so TARNet traces show the imbalance
        bw = config.bandwidth if bandwidth is None else bandwidth
        val, gA, gB = mmd_and_grad(H[treated], H[~treated], config.kernel, bw)
        terms["mmd"] = max(val, 0.0)
        if config.ipm_weight > 0:
            g_H[treated] += config.ipm_weight * gA
            g_H[~treated] += config.ipm_weight * gB

    phi_grads, _ = net.phi.backward(phi_acts, g_H)
    grads = list(phi_grads) + head_grads[0] + head_grads[1]
    if config.dragon:
        grads += list(g_prop_params) + [grads_eps]
    total = (
        factual
        + config.ipm_weight * terms["mmd"]
        + (config.alpha * terms["propensity_loss"] + config.beta * terms["targeted_term"] if config.dragon else 0.0)
    )
    terms["total"] = total
    return terms, grads


_VERIFIED: set = set()


def repnet_gradient_check(config: RepNetConfig, X, t, y, bandwidth: Optional[float] = None, step=1e-5) -> float:
    """Relative error between backprop and finite differences of the full loss.

    With the median heuristic the bandwidth is computed once at the initial
    parameters and held fixed, since the training gradient treats it as constant.
    """
    X = np.asarray(X, float)
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    rng = np.random.default_rng(config.seed)
    net = _Net(X.shape[1], config, rng)
    # move off the zero initialization so every term has a gradient
    net.epsilon[:] = 0.3
    for p in net.params:
        p += 0.05 * rng.normal(size=p.shape)
    u = float(np.clip(t.mean(), 1e-3, 1 - 1e-3))
    if bandwidth is None and config.kernel == "rbf":
        if config.bandwidth == "median":
            H, _ = net.phi.forward(X)
            bandwidth = median_bandwidth(H)
        else:
            bandwidth = float(config.bandwidth)
    _, analytic = _loss_and_grad(net, config, X, t, y, u, bandwidth)
    numeric = numeric_gradient(lambda: _loss_and_grad(net, config, X, t, y, u, bandwidth)[0]["total"], net.params, step)
    return max_relative_error(analytic, numeric)


def _ensure_verified(config: RepNetConfig):
    key = (config.activation, config.kernel, config.dragon, config.ipm_weight > 0)
    if key in _VERIFIED:
        return
    probe = RepNetConfig(
        rep_widths=(5, 4), head_widths=(3,), ipm_weight=1.0 if config.ipm_weight > 0 else 0.0,
        kernel=config.kernel, bandwidth=1.0, dragon=config.dragon, activation=config.activation, seed=7,
    )
    rng = np.random.default_rng(11)
    X = rng.normal(size=(10, 3))
    t = np.array([1, 0] * 5, dtype=float)
    y = rng.normal(size=10)
    err = repnet_gradient_check(probe, X, t, y)
    if err > 1e-4:
        raise TrainingError(f"gradient check failed for {key}: max relative error {err:.2e}")
    _VERIFIED.add(key)


@dataclass
class TrainingTrace:
    rows: list = field(default_factory=list)  # dicts with epoch + loss terms

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def is_non_increasing(self, tol=0.05) -> bool:
        """Each epoch's mean total loss is at most ``(1 + tol)`` times the previous one."""
        total = self.column("total")
        return bool(np.all(total[1:] <= (1.0 + tol) * total[:-1]))

    def csv(self) -> str:
        lines = ["epoch,factual_loss,mmd,propensity_loss,targeted_term"]
        for r in self.rows:
            lines.append(f"{r['epoch']},{r['factual_loss']!r},{r['mmd']!r},{r['propensity_loss']!r},{r['targeted_term']!r}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        atomic_write_text(Path(path), self.csv())


class RepNetModel(CateModel):
    family = "repnet"

    def __init__(self, net: _Net, config: RepNetConfig, scaler, offset, trace, metadata):
        super().__init__(metadata)
        self.net = net
        self.config = config
        self.scaler = scaler
        self.offset = offset
        self.trace = trace

    def representation(self, X):
        H, _ = self.net.phi.forward(self.scaler(np.atleast_2d(np.asarray(X, float))))
        return H

    def predict_y(self, X, t) -> np.ndarray:
        H = self.representation(X)
        t = np.broadcast_to(np.asarray(t), (H.shape[0],))
        out = np.empty(H.shape[0])
        for arm in (0, 1):
            mask = t == arm
            if mask.any():
                out[mask] = self.net.heads[arm].forward(H[mask])[0][:, 0]
        return out + self.offset

    def predict_tau(self, X) -> np.ndarray:
        H = self.representation(X)
        return self.net.heads[1].forward(H)[0][:, 0] - self.net.heads[0].forward(H)[0][:, 0]

    def predict_propensity(self, X) -> np.ndarray:
        if self.net.prop is None:
            raise ConfigError("propensity head exists only when dragon is on")
        z = self.net.prop.forward(self.representation(X))[0][:, 0]
        return _sigmoid(z)

    def representation_mmd(self, X, t, kernel=None) -> float:
        H = self.representation(X)
        t = np.asarray(t)
        return mmd(H[t == 1], H[t == 0], kernel or self.config.kernel, "median").value

    @property
    def epsilon(self) -> float:
        return float(self.net.epsilon[0])


def fit_repnet(dataset: ObservationalDataset, config: Union[RepNetConfig, dict, None] = None) -> RepNetModel:
    """Train by plain mini-batch gradient descent with a seeded batch order."""
    if not isinstance(config, RepNetConfig):
        config = RepNetConfig.from_dict(config or {})
    dataset.require_both_arms("representation learner")
    _ensure_verified(config)
    init_seed, order_seed = derive_seeds(config.seed, 2)
    scaler = Standardizer(dataset.X, config.standardize)
    X = scaler(dataset.X)
    t = dataset.t.astype(float)
    offset = float(dataset.y.mean())
    y = dataset.y - offset
    u = float(t.mean())
    net = _Net(X.shape[1], config, np.random.default_rng(init_seed))
    rng = np.random.default_rng(order_seed)
    n = X.shape[0]
    bs = min(config.batch_size, n)
    trace = TrainingTrace()
    keys = ("factual_loss", "mmd", "propensity_loss", "targeted_term", "total")
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = dict.fromkeys(keys, 0.0)
        for start in range(0, n, bs):
            b = perm[start:start + bs]
            terms, grads = _loss_and_grad(net, config, X[b], t[b], y[b], u)
            if not np.isfinite(terms["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            for p, g in zip(net.params, grads):
                p -= config.lr * g
            for k in keys:
                sums[k] += terms[k] * len(b)
        trace.rows.append({"epoch": epoch, **{k: v / n for k, v in sums.items()}})
    family = "dragonnet" if config.dragon else ("cfrnet" if config.ipm_weight > 0 else "tarnet")
    return RepNetModel(net, config, scaler, offset, trace, {"family": family, "config": config.to_dict(), "seed": config.seed})


def fit_tarnet(dataset, **options) -> RepNetModel:
    return fit_repnet(dataset, RepNetConfig(**{**options, "ipm_weight": 0.0, "dragon": False}))


def fit_cfrnet(dataset, ipm_weight=1.0, **options) -> RepNetModel:
    return fit_repnet(dataset, RepNetConfig(ipm_weight=ipm_weight, **options))


def fit_dragonnet(dataset, **options) -> RepNetModel:
    return fit_repnet(dataset, RepNetConfig(**{**options, "dragon": True}))


@dataclass(frozen=True)
class DragonResult:
    tau: np.ndarray
    ate_mean: float
    ate_targeted: float
    epsilon: float


def dragonnet_tau(model: RepNetModel, dataset: ObservationalDataset) -> DragonResult:
    """Per-unit effects and two ATEs: the plain mean and the targeted estimate.

    The targeted ATE is ``mean(tau + epsilon * (1/g + 1/(1-g)))``, i.e. the
    mean difference of the epsilon-perturbed outcome heads.
    """
    if not model.config.dragon:
        raise ConfigError("dragonnet_tau needs a model trained with dragon on")
    tau = model.predict_tau(dataset.X)
    g = _squash(model.predict_propensity(dataset.X))
    eps = model.epsilon
    targeted = tau + eps * (1.0 / g + 1.0 / (1.0 - g))
    return DragonResult(tau, float(tau.mean()), float(targeted.mean()), eps)
