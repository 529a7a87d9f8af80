"""A target-trial emulation on synthetic claims data.

Generates patient timelines, runs eligibility, treatment labelling,
covariate construction and weighted sampling, then estimates effects and
explains them.

Run: python3 demos/03_cohort_study.py
"""

import numpy as np

from htekit.cohort import ClaimsParams, EffectModel, generate_claims, run_pipeline
from htekit.evaluation import pehe
from htekit.importance import permutation_importance
from htekit.metalearners import fit_t_learner
from htekit.propensity import auroc, estimate_propensity, iptw_ate

# the study drug lowers risk by 0.1 overall and by a further 0.2 for patients with phe:001
params = ClaimsParams(n_patients=20_000, effect=EffectModel(base=-0.1, code_a="phe:001", coef_a=-0.2))
timelines = generate_claims(params, seed=3)
res = run_pipeline(timelines, seed=3)

print("funnel:")
for key, value in res.summary().items():
    print(f"  {key}: {value}")

ds = res.matrix.to_dataset()
sp = res.split(seed=3)
print(f"split sizes (train, validation, test): {sp.sizes}")

scores = estimate_propensity(ds, seed=3)
print(f"propensity AUROC: {auroc(scores, ds.t):.3f}")
print(f"IPTW ATE: {iptw_ate(ds, scores).value:+.3f}  (true mean effect {ds.truth.tau.mean():+.3f})")

train, test = ds.subset(sp.train), ds.subset(sp.test)
model = fit_t_learner(train, {"kind": "forest", "n_trees": 100, "max_depth": 6, "min_samples_leaf": 20}, seed=3)
tau_hat = model.predict_tau(test.X)
print(f"T-learner sqrt PEHE on test: {np.sqrt(pehe(tau_hat, test.truth.tau)):.3f}")

imp = permutation_importance(model, test, repeats=3, seed=3)
print("top features by permutation importance of tau_hat:")
for j in np.argsort(imp.ranks)[:5]:
    print(f"  {imp.feature_names[j]:<14} {imp.scores[j]:.5f}")
