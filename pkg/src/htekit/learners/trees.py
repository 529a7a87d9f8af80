"""CART regression trees, bagged forests and gradient-boosted trees.

Classification forests grow the same squared-error trees on 0/1 labels, so
leaf values are class-1 frequencies.
"""

from __future__ import annotations

import numpy as np

from .linear import _sigmoid
from .spec import LearnerError

_TIE_RTOL = 1e-12


def _best_split(X, y, w, idx, features, min_leaf):
    """Best (feature, threshold) for the rows ``idx`` by weighted squared-error reduction.

    Ties go to the lowest feature index, then the lowest threshold.
    Returns ``None`` if no valid split exists.
    """
    m = len(idx)
    if m < 2 * min_leaf:
        return None
    Xn = X[np.ix_(idx, features)]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    if w is None:
        ys = y[idx][order]
        csum = np.cumsum(ys, axis=0)[:-1]
        total = ys.sum(axis=0)
        w_left = np.arange(1, m, dtype=float)[:, None]
        w_right = m - w_left
    else:
        ws = w[idx][order]
        ys = (y[idx] * w[idx])[order]
        csum = np.cumsum(ys, axis=0)[:-1]
        total = ys.sum(axis=0)
        cw = np.cumsum(ws, axis=0)[:-1]
        w_left = np.maximum(cw, 1e-300)
        w_right = np.maximum(ws.sum(axis=0) - cw, 1e-300)
    n_left = np.arange(1, m)[:, None]
    score = csum**2 / w_left + (total - csum) ** 2 / w_right
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    best = score.max()
    cand = np.argwhere(score >= best - _TIE_RTOL * max(abs(best), 1.0))
    # cand rows: (position, feature column); prefer lowest feature id, then threshold
    feat_ids = np.asarray(features)[cand[:, 1]]
    thresholds = 0.5 * (xs[cand[:, 0], cand[:, 1]] + xs[cand[:, 0] + 1, cand[:, 1]])
    k = np.lexsort((thresholds, feat_ids))[0]
    pos, col = cand[k]
    return int(feat_ids[k]), float(thresholds[k]), idx[order[: pos + 1, col]], idx[order[pos + 1:, col]]


class Tree:
    """Array-backed binary tree; leaves have ``feature == -1``."""

    def __init__(self, max_depth=8, min_samples_leaf=1, n_sub_features=None):
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.n_sub_features = n_sub_features

    def fit(self, X, y, rng=None, rows=None, sample_weight=None):
        n, d = X.shape
        w = sample_weight
        rows = np.arange(n) if rows is None else np.asarray(rows)
        k = d if self.n_sub_features is None else min(d, max(1, int(self.n_sub_features)))
        feature, threshold, left, right, value, depth_of = [], [], [], [], [], []

        def new_node(r, depth):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            if w is None:
                value.append(float(y[r].mean()))
            else:
                value.append(float(np.sum(w[r] * y[r]) / max(np.sum(w[r]), 1e-300)))
            depth_of.append(depth)
            return len(feature) - 1

        stack = [(new_node(rows, 0), rows, 0)]
        while stack:
            node, r, depth = stack.pop()
            if depth >= self.max_depth or len(r) < 2 * self.min_samples_leaf:
                continue
            yr = y[r]
            if yr.min() == yr.max():
                continue
            if k < d:
                feats = np.sort(rng.choice(d, size=k, replace=False))
            else:
                feats = np.arange(d)
            found = _best_split(X, y, w, r, feats, self.min_samples_leaf)
            if found is None:
                continue
            f, thr, lr_, rr_ = found
            feature[node] = f
            threshold[node] = thr
            li = new_node(lr_, depth + 1)
            ri = new_node(rr_, depth + 1)
            left[node] = li
            right[node] = ri
            stack.append((ri, rr_, depth + 1))
            stack.append((li, lr_, depth + 1))
        self.feature = np.array(feature, dtype=int)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=int)
        self.right = np.array(right, dtype=int)
        self.value = np.array(value)
        self.depth = int(max(depth_of))
        return self

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            ri = rows[internal]
            ni = node[internal]
            go_left = X[ri, f[internal]] <= self.threshold[ni]
            node[ri] = np.where(go_left, self.left[ni], self.right[ni])
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


def _n_sub_features(max_features, d):
    if max_features == "all":
        return d
    if max_features == "sqrt":
        return max(1, int(np.sqrt(d)))
    if max_features == "third":
        return max(1, d // 3)
    if isinstance(max_features, float) and max_features <= 1.0:
        return max(1, int(round(max_features * d)))
    return min(d, int(max_features))


class Forest:
    """Bagged CART trees with per-node feature subsampling."""

    def __init__(self, params, seed):
        self.params = params
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        p = self.params
        n, d = X.shape
        k = _n_sub_features(p["max_features"], d)
        children = np.random.SeedSequence(self.seed).spawn(int(p["n_trees"]))
        self.trees = []
        for child in children:
            rng = np.random.default_rng(child)
            rows = rng.integers(0, n, size=n) if p["bootstrap"] else np.arange(n)
            tree = Tree(p["max_depth"], p["min_samples_leaf"], k)
            self.trees.append(tree.fit(X, y, rng, rows, sample_weight))
        return self

    def predict(self, X):
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)


class Boosted:
    """Gradient boosting with shallow trees (stumps by default).

    ``objective="squared"`` boosts a regressor; ``"logistic"`` boosts log-odds
    with Newton leaf values and returns probabilities.
    """

    def __init__(self, params, seed, objective="squared"):
        self.params = params
        self.seed = seed
        self.objective = objective

    def fit(self, X, y, sample_weight=None):
        p = self.params
        n = X.shape[0]
        w = sample_weight
        rng = np.random.default_rng(self.seed)
        lr = p["learning_rate"]
        if self.objective == "logistic":
            ybar = float(np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6))
            self.base = float(np.log(ybar / (1 - ybar)))
        else:
            self.base = float(np.average(y, weights=w))
        F = np.full(n, self.base)
        self.trees = []
        n_sub = max(1, int(round(p["subsample"] * n)))
        for _ in range(int(p["n_estimators"])):
            if self.objective == "logistic":
                prob = _sigmoid(F)
                grad = y - prob
                hess = prob * (1 - prob)
            else:
                grad = y - F
                hess = None
            rows = np.sort(rng.choice(n, n_sub, replace=False)) if n_sub < n else None
            if hess is not None:
                # Newton boosting: fit the step g/h with weights h
                target = grad / np.maximum(hess, 1e-12)
                tw = hess if w is None else hess * w
                tree = Tree(p["max_depth"], p["min_samples_leaf"]).fit(X, target, rows=rows, sample_weight=tw)
                leaf = tree.apply(X if rows is None else X[rows])
                g = grad if w is None else grad * w
                h = tw
                if rows is not None:
                    g, h = g[rows], h[rows]
                num = np.bincount(leaf, weights=g, minlength=len(tree.value))
                den = np.bincount(leaf, weights=h, minlength=len(tree.value))
                tree.value = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
                tree.value = np.clip(tree.value, -10.0, 10.0)
            else:
                tree = Tree(p["max_depth"], p["min_samples_leaf"]).fit(X, grad, rows=rows, sample_weight=w)
            F = F + lr * tree.predict(X)
            self.trees.append(tree)
        return self

    def decision_function(self, X):
        F = np.full(X.shape[0], self.base)
        lr = self.params["learning_rate"]
        for tree in self.trees:
            F += lr * tree.predict(X)
        return F

    def predict(self, X):
        F = self.decision_function(X)
        if self.objective == "logistic":
            return _sigmoid(F)
        return F


def check_labels(y):
    if np.any((y < 0) | (y > 1)):
        raise LearnerError("classifier labels must lie in [0, 1]")
