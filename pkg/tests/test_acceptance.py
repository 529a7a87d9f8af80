"""Acceptance suite: one test and one PASS/FAIL summary line per criterion."""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from htekit import synthetic
from htekit.cohort import (
    AD_CODES,
    MEDICATION,
    ClaimsParams,
    EligibilitySpec,
    EventRecord,
    PatientTimeline,
    apply_eligibility,
    build_covariates,
    generate_claims,
    label_treatment,
    log_count,
    run_pipeline,
)
from htekit.core import dataset_to_csv_text, split
from htekit.estimators import fit_estimator
from htekit.evaluation import IfPeheContext, build_if_pehe_context, ermse, if_pehe, pehe
from htekit.importance import exact_shapley
from htekit.learners import gradient_check
from htekit.metalearners import ConstantCate, fit_rdml, fit_s_learner, fit_t_learner, fit_x_learner
from htekit.propensity import auroc, estimate_propensity, iptw_ate, naive_difference
from htekit.replearn import RepNetConfig, fit_repnet, repnet_gradient_check

FOREST = {"kind": "forest", "n_trees": 50, "max_depth": 6}


def test_criterion_01_iptw_unbiasedness(verdict):
    t0 = time.perf_counter()
    ipw, naive = [], []
    for seed in range(20):
        ds = synthetic.confounded(n=10_000, seed=seed, ate=1.0)
        ipw.append(iptw_ate(ds, ds.truth.true_propensity).value)
        naive.append(naive_difference(ds).value)
    err = abs(np.median(ipw) - 1.0)
    bias = np.median(naive) - 1.0
    secs = time.perf_counter() - t0
    ok = err <= 0.05 and bias >= 0.3 and secs < 60
    verdict(1, "IPTW unbiasedness", ok, f"|median IPTW - 1| = {err:.4f}, naive bias = {bias:.3f}, {secs:.1f}s")


def test_criterion_02_dml_recovery(verdict):
    t0 = time.perf_counter()
    outcome = {"kind": "boosted-stumps", "max_depth": 2, "n_estimators": 100}
    treatment = {"kind": "boosted-stumps", "n_estimators": 100}
    est = []
    for seed in range(20):
        ds = synthetic.partially_linear(n=5000, seed=seed, tau=0.5)
        m = fit_rdml(ds, outcome, treatment, "ols", folds=2, seed=seed)
        est.append(float(m.predict_tau(ds.X[:1])[0]))
    err = abs(np.median(est) - 0.5)
    secs = time.perf_counter() - t0
    verdict(2, "DML recovery", err <= 0.1 and secs < 120, f"|median tau_hat - 0.5| = {err:.4f}, {secs:.1f}s")


def test_criterion_03_metalearner_consistency(verdict):
    t0 = time.perf_counter()
    fits = {
        "S": lambda d, s: fit_s_learner(d, FOREST, s),
        "T": lambda d, s: fit_t_learner(d, FOREST, s),
        "X": lambda d, s: fit_x_learner(d, FOREST, FOREST, seed=s),
    }
    med = {}
    for name, fit in fits.items():
        for n in (500, 4000):
            errs = []
            for seed in range(10):
                ds = synthetic.heterogeneous(n=n, seed=seed)
                errs.append(np.sqrt(pehe(fit(ds, seed).predict_tau(ds.X), ds.truth.tau)))
            med[name, n] = float(np.median(errs))
    secs = time.perf_counter() - t0
    ok = all(med[k, 4000] < med[k, 500] for k in fits) and secs < 300
    detail = ", ".join(f"{k}: {med[k, 500]:.3f} -> {med[k, 4000]:.3f}" for k in fits)
    verdict(3, "meta-learner consistency", ok, f"{detail}, {secs:.1f}s")


def test_criterion_04_x_learner_under_imbalance(verdict):
    wins = 0
    for seed in range(20):
        ds = synthetic.imbalanced(n=2000, seed=seed, treated_fraction=0.05)
        x = np.sqrt(pehe(fit_x_learner(ds, FOREST, FOREST, seed=seed).predict_tau(ds.X), ds.truth.tau))
        t = np.sqrt(pehe(fit_t_learner(ds, FOREST, seed).predict_tau(ds.X), ds.truth.tau))
        wins += x <= t
    verdict(4, "X-learner imbalance", wins >= 12, f"X <= T in {wins}/20 seeds")


RANKING_CANDIDATES = [
    {"family": "naive"},
    {"family": "constant", "value": 0.0},
    {"family": "s", "outcome_spec": "linear"},
    {"family": "t", "outcome_spec": "linear"},
    {"family": "t", "outcome_spec": FOREST},
    {"family": "x", "outcome_spec": FOREST, "effect_spec": FOREST},
    {"family": "s", "outcome_spec": FOREST},
]


def test_criterion_05_if_pehe_ranking_fidelity(verdict):
    t0 = time.perf_counter()
    rhos = []
    for seed in range(10):
        ds = synthetic.heterogeneous(n=3000, seed=seed)
        sp = split(ds, (1, 0, 1), seed)
        train, test = ds.subset(sp.train), ds.subset(sp.test)
        ctx = build_if_pehe_context(test, seed)
        fingerprint = ctx.fingerprint
        scores, truth = [], []
        for cfg in RANKING_CANDIDATES:
            m = fit_estimator(cfg, train, seed)
            scores.append(if_pehe(m, ctx))
            truth.append(pehe(m.predict_tau(test.X), test.truth.tau))
        assert ctx.fingerprint == fingerprint
        rhos.append(spearmanr(scores, truth).statistic)
    rho = float(np.median(rhos))
    secs = time.perf_counter() - t0
    ok = rho >= 0.6 and secs < 600
    verdict(5, "IF-PEHE ranking fidelity", ok,
            f"median Spearman = {rho:.3f} over {len(RANKING_CANDIDATES)} candidates, {secs:.1f}s")


def test_criterion_06_cfrnet_balance(verdict, rng):
    lower = 0
    for seed in range(10):
        ds = synthetic.confounded(n=1000, seed=seed, strength=1.5)
        base = {"epochs": 200, "seed": seed}
        tar = fit_repnet(ds, {**base, "ipm_weight": 0.0})
        cfr = fit_repnet(ds, {**base, "ipm_weight": 1.0})
        lower += cfr.representation_mmd(ds.X, ds.t) < tar.representation_mmd(ds.X, ds.t)
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    t = np.array([1, 0] * 6, dtype=float)
    mlp_err = max(
        gradient_check({"kind": "mlp", "hidden": [8, 6], "seed": 1}, X, y),
        gradient_check({"kind": "mlp", "hidden": [5], "seed": 2}, X, (y > 0).astype(float), "logistic"),
    )
    full_err = max(
        repnet_gradient_check(RepNetConfig(rep_widths=(5, 4), head_widths=(3,), bandwidth=1.0, seed=3, **o), X, t, y)
        for o in ({"ipm_weight": 1.0}, {"ipm_weight": 1.0, "dragon": True})
    )
    ok = lower >= 8 and mlp_err < 1e-4 and full_err < 1e-4
    verdict(6, "CFRNet balance", ok,
            f"MMD2 lower in {lower}/10 seeds; gradient errors mlp {mlp_err:.1e}, full loss {full_err:.1e}")


def test_criterion_07_randomization_diagnostic(verdict):
    ds = synthetic.linear(n=10_000, seed=0)
    a = auroc(estimate_propensity(ds, seed=0), ds.t)
    verdict(7, "randomization diagnostic", 0.47 <= a <= 0.53, f"out-of-fold AUROC = {a:.4f}")


def _filter_fixture():
    pts = []
    for i in range(100):
        ev = [(1, "phe:flat", "diagnosis"), (50, "DB00471" if i % 2 else "DB01001", MEDICATION)]
        if i < 4:
            ev.append((2, "phe:rare", "diagnosis"))
        if i % 2 == 0:
            ev += [(3, "phe:wide", "diagnosis")] * 15
        if i % 7 == 0:
            ev.append((400, AD_CODES[0], "diagnosis"))
        pts.append(PatientTimeline(i, 1935, "F", "white", tuple(EventRecord(i, d, c, s) for d, c, s in ev)))
    return pts


def test_criterion_08_cohort_determinism_and_arithmetic(verdict):
    tls = generate_claims(ClaimsParams(n_patients=3000), 11)
    again = generate_claims(ClaimsParams(n_patients=3000), 11)
    a = dataset_to_csv_text(run_pipeline(tls, seed=4).matrix.to_dataset())
    b = dataset_to_csv_text(run_pipeline(again, seed=4).matrix.to_dataset())
    sizes = split(11_285, (6, 2, 2), 0).sizes
    lc = float(log_count(3))
    lab = label_treatment(apply_eligibility(_filter_fixture(), EligibilitySpec())[0])
    dropped = build_covariates(lab, 0.05, 0.2).dropped
    ok = a == b and sizes == (6771, 2257, 2257) and lc == 2.0 and dropped == {
        "prevalence": ["phe:rare"], "variance": ["phe:flat"]}
    verdict(8, "cohort determinism and arithmetic", ok,
            f"identical={a == b}, split={sizes}, log2(1+3)={lc}, dropped={dropped}")


def test_criterion_09_shapley_efficiency(verdict):
    ds = synthetic.heterogeneous(n=800, d=8, seed=2)
    model = fit_t_learner(ds, {"kind": "forest", "n_trees": 20, "max_depth": 5}, 0)
    base = ds.X.mean(axis=0)
    f_base = model.predict_tau(base[None, :])[0]
    worst = 0.0
    for x in np.random.default_rng(9).normal(size=(100, 8)):
        phi = exact_shapley(model, x, base)
        worst = max(worst, abs(phi.sum() - (model.predict_tau(x[None, :])[0] - f_base)))
    verdict(9, "Shapley efficiency", worst <= 1e-8, f"max |sum(phi) - gap| = {worst:.2e} over 100 instances")


def test_criterion_10_metric_identities(verdict):
    rng = np.random.default_rng(10)
    tau = rng.normal(size=200)
    p0 = pehe(tau, tau)
    p_off = pehe(tau + 0.25, tau)
    ds = synthetic.heterogeneous(n=400, seed=1)
    sp = split(ds, (1, 0, 1), 0)
    e = ermse({"family": "constant", "value": 1.5}, ds.subset(sp.train), ds.subset(sp.test))
    ctx = IfPeheContext.from_arrays([[0.0]], w=[1], y=[1.0], t_bar=[1.0], pi=[0.5])
    fixture = if_pehe(ConstantCate(1.0), ctx)
    ok = p0 == 0.0 and abs(p_off - 0.0625) < 1e-12 and e == 0.0 and abs(fixture + 2.0) < 1e-12
    verdict(10, "metric identities", ok,
            f"pehe(tau,tau)={p0}, offset pehe={p_off:.6f}, constant ermse={e}, single-unit IF-PEHE={fixture}")
