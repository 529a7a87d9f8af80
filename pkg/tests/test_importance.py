import itertools
import math

import numpy as np
import pytest

from htekit.core import ObservationalDataset
from htekit.importance import (
    MAX_SHAPLEY_FEATURES,
    ImportanceError,
    exact_shapley,
    permutation_importance,
    shapley_report,
)


class FnModel:
    def __init__(self, fn):
        self.fn = fn

    def predict_tau(self, X):
        return self.fn(np.asarray(X, dtype=float))


def _shapley_oracle(f, x, b):
    """Shapley values from the permutation definition (average marginal contribution)."""
    d = len(x)
    phi = np.zeros(d)
    perms = list(itertools.permutations(range(d)))
    for order in perms:
        z = b.copy()
        prev = f(z[None, :])[0]
        for j in order:
            z[j] = x[j]
            cur = f(z[None, :])[0]
            phi[j] += cur - prev
            prev = cur
    return phi / math.factorial(d)


def test_ignored_feature_scores_zero(rng):
    X = rng.normal(size=(200, 3))
    rep = permutation_importance(FnModel(lambda Z: Z[:, 0] * Z[:, 1]), X, repeats=3, seed=1)
    assert rep.scores[2] < 1e-8
    assert rep.method == "permutation"


def test_identity_model_ranks_first(rng):
    X = rng.normal(size=(300, 4))
    rep = permutation_importance(FnModel(lambda Z: Z[:, 0]), X, seed=0)
    assert rep.ranks[0] == 1 and rep.scores[0] > rep.scores[1:].max()
    # shuffling x0 doubles its variance in the squared gap: E[(x - x')^2] = 2 var(x)
    assert rep.scores[0] == pytest.approx(2 * X[:, 0].var(), rel=0.2)


def test_repeats_change_means_not_ranks(rng):
    X = rng.normal(size=(300, 2))
    model = FnModel(lambda Z: 2.0 * Z[:, 0] + 0.5 * Z[:, 1])
    one = permutation_importance(model, X, repeats=1, seed=3)
    five = permutation_importance(model, X, repeats=5, seed=3)
    assert not np.allclose(one.scores, five.scores)
    assert np.array_equal(one.ranks, five.ranks)


def test_permutation_is_deterministic_and_validates(rng):
    X = rng.normal(size=(50, 2))
    m = FnModel(lambda Z: Z.sum(axis=1))
    assert np.array_equal(permutation_importance(m, X, seed=9).scores, permutation_importance(m, X, seed=9).scores)
    with pytest.raises(ImportanceError):
        permutation_importance(m, X, repeats=0)
    with pytest.raises(ImportanceError):
        permutation_importance(m, np.zeros((5, 0)))


def test_additive_model_closed_form(rng):
    f0, f1 = np.sin, lambda v: v**2
    m = FnModel(lambda Z: f0(Z[:, 0]) + f1(Z[:, 1]))
    x, b = np.array([0.7, -1.2]), np.array([0.1, 0.4])
    assert np.allclose(exact_shapley(m, x, b), [f0(0.7) - f0(0.1), f1(-1.2) - f1(0.4)], atol=1e-12)


def test_matches_permutation_definition_on_interacting_model(rng):
    f = lambda Z: Z[:, 0] * Z[:, 1] + np.exp(Z[:, 2]) * Z[:, 3] - Z[:, 1] ** 3
    x, b = rng.normal(size=4), rng.normal(size=4)
    assert np.allclose(exact_shapley(FnModel(f), x, b), _shapley_oracle(f, x, b), atol=1e-10)


def test_zero_attributions(rng):
    x = rng.normal(size=5)
    m = FnModel(lambda Z: np.tanh(Z).prod(axis=1))
    assert np.allclose(exact_shapley(m, x, x), 0.0)
    assert np.allclose(exact_shapley(FnModel(lambda Z: np.full(len(Z), 3.0)), x, np.zeros(5)), 0.0)


def test_symmetry_and_efficiency(rng):
    m = FnModel(lambda Z: Z[:, 0] * Z[:, 1] + Z[:, 2])
    phi = exact_shapley(m, np.array([2.0, 2.0, 1.0]), np.zeros(3))
    assert phi[0] == pytest.approx(phi[1])
    assert phi.sum() == pytest.approx(5.0)


def test_refuses_too_many_features():
    d = MAX_SHAPLEY_FEATURES + 1
    with pytest.raises(ImportanceError, match="permutation"):
        exact_shapley(FnModel(lambda Z: Z[:, 0]), np.zeros(d), np.zeros(d))


def test_shapley_report_and_csv(rng):
    X = rng.normal(size=(30, 3))
    ds = ObservationalDataset(X, np.r_[np.ones(15), np.zeros(15)].astype(int), np.zeros(30), ("a", "b", "c"))
    m = FnModel(lambda Z: 3 * Z[:, 0] - Z[:, 2])
    rep = shapley_report(m, ds, instances=[0, 5, 7])
    base = X.mean(axis=0)
    assert np.allclose(rep.attributions.sum(axis=1), m.predict_tau(X[[0, 5, 7]]) - m.predict_tau(base[None, :])[0])
    imp = rep.importance_csv().splitlines()
    assert imp[0] == "feature,score,rank" and imp[1].startswith("a,") and imp[1].endswith(",1")
    att = rep.attributions_csv().splitlines()
    assert att[0] == "instance_id,feature,value" and len(att) == 1 + 3 * 3
    assert att[1].startswith("0,a,")
    with pytest.raises(ImportanceError):
        permutation_importance(m, ds).attributions_csv()
