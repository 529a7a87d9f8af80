"""Linear, elastic-net and logistic regression."""

from __future__ import annotations

import numpy as np

from .spec import LearnerError


class Standardizer:
    def __init__(self, X, enabled=True):
        if enabled:
            self.mean = X.mean(axis=0)
            sd = X.std(axis=0)
            self.scale = np.where(sd > 0, sd, 1.0)
        else:
            self.mean = np.zeros(X.shape[1])
            self.scale = np.ones(X.shape[1])

    def __call__(self, X):
        return (X - self.mean) / self.scale


class LinearModel:
    """Least squares with optional elastic-net penalty.

    The penalty is ``alpha * (l1_ratio * |w|_1 + 0.5 * (1 - l1_ratio) * |w|_2^2)``
    on the standardized coefficients; the loss is ``0.5 * mean(residual^2)``.
    The intercept is never penalized.
    """

    def __init__(self, params):
        self.params = params

    def fit(self, X, y, sample_weight=None):
        p = self.params
        self.scaler = Standardizer(X, p["standardize"])
        Z = self.scaler(X)
        n, d = Z.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        w = w / w.sum()
        xm = w @ Z
        ym = float(w @ y)
        Zc = Z - xm
        yc = y - ym
        alpha = p["alpha"]
        l1 = alpha * p["l1_ratio"]
        l2 = alpha * (1 - p["l1_ratio"])
        if d == 0:
            coef = np.zeros(0)
        elif l1 == 0:
            G = (Zc * w[:, None]).T @ Zc + l2 * np.eye(d)
            b = (Zc * w[:, None]).T @ yc
            coef = np.linalg.lstsq(G, b, rcond=None)[0]
        else:
            coef = self._coordinate_descent(Zc, yc, w, l1, l2)
        self.coef_std = coef
        self.coef = coef / self.scaler.scale
        self.intercept = float(ym - (w @ X) @ self.coef)
        return self

    def _coordinate_descent(self, Z, y, w, l1, l2):
        d = Z.shape[1]
        coef = np.zeros(d)
        col_sq = w @ (Z * Z)
        r = y.copy()
        for _ in range(int(self.params["max_iter"])):
            max_delta = 0.0
            for j in range(d):
                if col_sq[j] == 0:
                    continue
                old = coef[j]
                rho = w @ (Z[:, j] * r) + col_sq[j] * old
                new = np.sign(rho) * max(abs(rho) - l1, 0.0) / (col_sq[j] + l2)
                if new != old:
                    r -= Z[:, j] * (new - old)
                    coef[j] = new
                    max_delta = max(max_delta, abs(new - old))
            if max_delta < self.params["tol"]:
                break
        return coef

    def predict(self, X):
        return X @ self.coef + self.intercept


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1pexp(z):
    return np.logaddexp(0.0, z)


class LogisticModel:
    """Logistic regression fit by full-batch gradient descent.

    Labels may be fractional in [0, 1] (cross-entropy against soft targets).
    The step size defaults to ``1/L`` where ``L`` bounds the Hessian.
    """

    def __init__(self, params):
        self.params = params

    def _loss(self, Z1, y, beta, alpha, w):
        z = Z1 @ beta
        return float(w @ (_log1pexp(z) - y * z) + 0.5 * alpha * beta[1:] @ beta[1:])

    def fit(self, X, y, sample_weight=None):
        y = np.asarray(y, float)
        if np.any((y < 0) | (y > 1)):
            raise LearnerError("logistic: targets must lie in [0, 1]")
        p = self.params
        self.scaler = Standardizer(X, p["standardize"])
        Z = self.scaler(X)
        n, d = Z.shape
        Z1 = np.hstack([np.ones((n, 1)), Z])
        w = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight, float) / np.sum(sample_weight)
        alpha = p["alpha"]
        if p["lr"] is None:
            top = np.linalg.eigvalsh((Z1 * w[:, None]).T @ Z1)[-1] if d else 1.0
            lr = 1.0 / (0.25 * top + alpha)
        else:
            lr = p["lr"]
        beta = np.zeros(d + 1)
        loss = self._loss(Z1, y, beta, alpha, w)
        self.n_iter = 0
        for it in range(int(p["max_iter"])):
            g = Z1.T @ ((_sigmoid(Z1 @ beta) - y) * w)
            g[1:] += alpha * beta[1:]
            beta = beta - lr * g
            new_loss = self._loss(Z1, y, beta, alpha, w)
            self.n_iter = it + 1
            if not np.isfinite(new_loss):
                raise LearnerError(f"logistic: loss diverged at iteration {it}")
            if abs(loss - new_loss) < p["tol"]:
                loss = new_loss
                break
            loss = new_loss
        self.loss = loss
        self.beta = beta
        return self

    def predict(self, X):
        Z = self.scaler(X)
        return _sigmoid(self.beta[0] + Z @ self.beta[1:])
