import math

import numpy as np
import pytest

from htekit import synthetic
from htekit.core import ObservationalDataset, PositivityError
from htekit.replearn import (
    ConfigError,
    RepNetConfig,
    dragonnet_tau,
    fit_cfrnet,
    fit_dragonnet,
    fit_repnet,
    fit_tarnet,
    mmd,
    repnet_gradient_check,
)

SMALL = dict(rep_widths=(8,), head_widths=(4,), epochs=40, batch_size=64)


def test_mmd_hand_values():
    assert mmd([[0.0]], [[1.0]], bandwidth=1.0).value == pytest.approx(2 - 2 * math.exp(-0.5))
    a = np.array([[0.0, 0.0], [2.0, 0.0]])
    b = np.array([[1.0, 3.0]])
    # linear kernel: squared distance between the means
    assert mmd(a, b, kernel="linear").value == pytest.approx(0.0 + 9.0)


def test_mmd_identity_and_symmetry(rng):
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=(20, 3)) + 0.5
    assert mmd(a, a).value == pytest.approx(0.0, abs=1e-12)
    assert mmd(a, b).value == pytest.approx(mmd(b, a).value, abs=1e-12)
    assert mmd(a, b).value >= 0


def test_mmd_small_under_null(rng):
    null = mmd(rng.normal(size=(300, 2)), rng.normal(size=(300, 2))).value
    shifted = mmd(rng.normal(size=(300, 2)), rng.normal(size=(300, 2)) + 1.0).value
    assert null < 0.02 < shifted


def test_mmd_rejects_bad_input():
    with pytest.raises(ValueError):
        mmd(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        mmd(np.zeros((3, 2)), np.zeros((3, 2)), kernel="poly")


@pytest.mark.parametrize(
    "opts",
    [
        {},
        {"ipm_weight": 1.0},
        {"ipm_weight": 1.0, "kernel": "linear"},
        {"dragon": True},
        {"dragon": True, "activation": "relu", "ipm_weight": 0.5},
    ],
)
def test_gradients_match_finite_differences(opts, rng):
    cfg = RepNetConfig(rep_widths=(5, 4), head_widths=(3,), bandwidth=1.0, seed=3, **opts)
    X = rng.normal(size=(12, 3))
    t = np.array([1, 0] * 6, dtype=float)
    assert repnet_gradient_check(cfg, X, t, rng.normal(size=12)) < 1e-4


def test_config_validation():
    with pytest.raises(ConfigError):
        RepNetConfig(ipm_weight=-1)
    with pytest.raises(ConfigError):
        RepNetConfig.from_dict({"layers": 3})
    with pytest.raises(ConfigError):
        RepNetConfig(rep_widths=())


def test_single_arm_rejected():
    ds = ObservationalDataset(np.zeros((5, 1)), np.ones(5, dtype=int), np.zeros(5))
    with pytest.raises(PositivityError):
        fit_tarnet(ds, **SMALL)


def test_zero_ipm_weight_is_tarnet():
    ds = synthetic.confounded(n=300, seed=1)
    a = fit_tarnet(ds, seed=5, **SMALL)
    b = fit_cfrnet(ds, ipm_weight=0.0, seed=5, **SMALL)
    assert np.array_equal(a.predict_tau(ds.X), b.predict_tau(ds.X))


def test_deterministic_given_seed():
    ds = synthetic.confounded(n=200, seed=2)
    a = fit_cfrnet(ds, seed=9, **SMALL)
    b = fit_cfrnet(ds, seed=9, **SMALL)
    assert np.array_equal(a.predict_tau(ds.X), b.predict_tau(ds.X))


def test_outcome_equal_to_treatment_is_memorized(rng):
    X = np.zeros((400, 2))
    X[:, 0] = rng.integers(0, 2, 400)
    t = rng.integers(0, 2, 400)
    m = fit_tarnet(ObservationalDataset(X, t, t.astype(float)), epochs=150, seed=0)
    assert np.abs(m.predict_tau(X) - 1.0).max() < 0.1


def test_training_loss_decreases_and_trace_file(tmp_path):
    ds = synthetic.confounded(n=400, seed=3)
    m = fit_cfrnet(ds, seed=1, **{**SMALL, "epochs": 30})
    total = m.trace.column("total")
    assert total[-1] < total[0]
    m.trace.write(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "epoch,factual_loss,mmd,propensity_loss,targeted_term"
    assert len(lines) == 31


def test_dragonnet_without_targeting_has_equal_ates():
    ds = synthetic.confounded(n=300, seed=4)
    m = fit_dragonnet(ds, beta=0.0, seed=2, **SMALL)
    res = dragonnet_tau(m, ds)
    assert res.epsilon == 0.0
    assert res.ate_targeted == pytest.approx(res.ate_mean, abs=1e-12)


def test_dragonnet_propensity_head_in_range():
    ds = synthetic.confounded(n=300, seed=5)
    m = fit_dragonnet(ds, seed=1, **SMALL)
    g = m.predict_propensity(ds.X)
    assert np.all((g > 0) & (g < 1))
    with pytest.raises(ConfigError):
        dragonnet_tau(fit_tarnet(ds, **SMALL), ds)


@pytest.mark.slow
@pytest.mark.parametrize("family", ["tarnet", "cfrnet", "dragonnet"])
def test_ate_recovered_in_randomized_design(family):
    ds = synthetic.confounded(n=5000, seed=0, ate=1.0, strength=0.0)
    cfg = {"epochs": 60, "batch_size": 512, "seed": 0, "ipm_weight": 1.0 if family == "cfrnet" else 0.0, "dragon": family == "dragonnet"}
    m = fit_repnet(ds, cfg)
    ate = dragonnet_tau(m, ds).ate_targeted if family == "dragonnet" else m.predict_tau(ds.X).mean()
    assert abs(ate - 1.0) < 0.1
