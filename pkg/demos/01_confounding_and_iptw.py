"""Confounding, propensity scores and inverse-probability weighting.

Run: python3 demos/01_confounding_and_iptw.py
"""

from htekit import synthetic
from htekit.propensity import auroc, balance_report, estimate_propensity, iptw_ate, naive_difference

# x0 drives both who gets treated and the baseline outcome; the true ATE is 1
ds = synthetic.confounded(n=10_000, seed=0, ate=1.0, strength=1.0)
print(f"n={ds.n}, treated fraction={ds.treated_fraction:.2f}")

# comparing arm means mixes the effect with the x0 imbalance
print(f"naive difference:          {naive_difference(ds).value:.3f}")

# weighting by the known propensity removes it
print(f"IPTW, true propensity:     {iptw_ate(ds, ds.truth.true_propensity).value:.3f}")

# in practice the propensity is estimated; scores are out-of-fold and clipped
scores = estimate_propensity(ds, "logistic", seed=1)
print(f"IPTW, estimated propensity: {iptw_ate(ds, scores).value:.3f}")
print(f"propensity AUROC:          {auroc(scores, ds.t):.3f}")

# covariate balance before and after weighting
rep = balance_report(ds, scores)
for name, before, after in zip(ds.feature_names, rep.smd_unweighted, rep.smd_weighted):
    print(f"  {name}: SMD {before:+.3f} -> {after:+.3f}")

# a randomized design looks like a coin flip to the propensity model
rct = synthetic.linear(n=10_000, seed=0)
print(f"AUROC on randomized data:  {auroc(estimate_propensity(rct, seed=0), rct.t):.3f}")
print(f"mean x0 treated/control:   {rct.X[rct.t == 1, 0].mean():+.3f} / {rct.X[rct.t == 0, 0].mean():+.3f}")
