"""Feed-forward networks with hand-written backpropagation."""

from __future__ import annotations

import numpy as np

from .linear import Standardizer, _log1pexp, _sigmoid
from .spec import LearnerError

_ACT = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(float)),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


class Dense:
    """A stack of affine layers with a shared hidden activation.

    ``widths`` lists every layer size including input and output. The last
    layer uses ``output_activation``. Parameters are a flat list
    ``[W0, b0, W1, b1, ...]`` so optimizers and gradient checks can walk them.
    """

    def __init__(self, widths, activation="tanh", output_activation="identity", rng=None, init="glorot"):
        self.widths = [int(w) for w in widths]
        self.activation = activation
        self.output_activation = output_activation
        self.params = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            if init == "zeros":
                W = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_layers(self):
        return len(self.params) // 2

    def forward(self, X):
        acts = [X]
        a = X
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            name = self.output_activation if k == self.n_layers - 1 else self.activation
            a = _ACT[name][0](a @ W + b)
            acts.append(a)
        return a, acts

    def backward(self, acts, grad_out):
        """Gradients of the loss w.r.t. parameters and the input, given dL/d(output)."""
        grads = [None] * len(self.params)
        g = grad_out
        for k in reversed(range(self.n_layers)):
            name = self.output_activation if k == self.n_layers - 1 else self.activation
            g = g * _ACT[name][1](acts[k + 1])
            W = self.params[2 * k]
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ W.T
        return grads, g

    def copy_params(self):
        return [p.copy() for p in self.params]


def mlp_loss_and_grad(net, X, y, objective, alpha=0.0, weight=None):
    """Mean loss over rows and its parameter gradients.

    ``squared``: ``mean((f(x) - y)^2)``. ``logistic``: mean cross-entropy of
    ``sigmoid(f(x))`` against ``y``. With ``weight`` the mean is weighted.
    ``alpha`` adds ``0.5 * alpha * |W|^2``.
    """
    out, acts = net.forward(X)
    f = out[:, 0]
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if weight is None else weight / weight.sum()
    if objective == "logistic":
        loss = float(w @ (_log1pexp(f) - y * f))
        g = (_sigmoid(f) - y) * w
    else:
        r = f - y
        loss = float(w @ (r * r))
        g = 2.0 * r * w
    grads, _ = net.backward(acts, g[:, None])
    if alpha:
        for k in range(0, len(net.params), 2):
            loss += 0.5 * alpha * float(np.sum(net.params[k] ** 2))
            grads[k] = grads[k] + alpha * net.params[k]
    return loss, grads


class MLPModel:
    """Mini-batch gradient-descent MLP regressor or classifier."""

    def __init__(self, params, seed, objective="squared"):
        self.params = params
        self.seed = seed
        self.objective = objective

    def fit(self, X, y, sample_weight=None):
        p = self.params
        rng = np.random.default_rng(self.seed)
        self.scaler = Standardizer(X, p["standardize"])
        Z = self.scaler(X)
        n, d = Z.shape
        widths = [d, *p["hidden"], 1]
        self.net = Dense(widths, p["activation"], "identity", rng, p["init"])
        # zero output layer: the fit starts from the offset and a constant target stays exact
        self.net.params[-2][:] = 0.0
        if self.objective == "squared":
            # center targets so the output bias starts at the mean
            self.offset = float(np.average(y, weights=sample_weight))
        else:
            # start the output bias at the base-rate logit
            self.offset = 0.0
            rate = float(np.clip(np.average(y, weights=sample_weight), 1e-3, 1 - 1e-3))
            self.net.params[-1][:] = np.log(rate / (1 - rate))
        yt = y - self.offset
        bs = min(int(p["batch_size"]), n)
        self.loss_trace = []
        for epoch in range(int(p["epochs"])):
            perm = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                b = perm[start:start + bs]
                wb = None if sample_weight is None else sample_weight[b]
                loss, grads = mlp_loss_and_grad(self.net, Z[b], yt[b], self.objective, p["alpha"], wb)
                if not np.isfinite(loss):
                    raise LearnerError(f"mlp: non-finite loss at epoch {epoch}")
                for param, g in zip(self.net.params, grads):
                    param -= p["lr"] * g
                total += loss * len(b)
            self.loss_trace.append(total / n)
        return self

    def decision_function(self, X):
        out, _ = self.net.forward(self.scaler(X))
        return out[:, 0] + self.offset

    def predict(self, X):
        f = self.decision_function(X)
        return _sigmoid(f) if self.objective == "logistic" else f


def numeric_gradient(fun, params, step=1e-5):
    """Central finite differences of ``fun()`` w.r.t. every entry of ``params``."""
    grads = []
    for param in params:
        g = np.zeros_like(param)
        flat = param.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = fun()
            flat[i] = old - step
            down = fun()
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(b), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)) if a.size else 0.0)
    return worst
