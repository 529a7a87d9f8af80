import numpy as np
import pytest

from htekit.cohort import (
    AD_CODES,
    DAYS_PER_YEAR,
    EXCLUDED_MULTICLASS,
    EXCLUDED_UNTREATED,
    MEDICATION,
    PARKINSONS,
    STANDARD_OF_CARE,
    STROKE,
    STUDY,
    ClaimsParams,
    CohortError,
    CohortMatrix,
    DrugClassMap,
    EffectModel,
    EligibilitySpec,
    EventRecord,
    PatientTimeline,
    SamplingError,
    apply_eligibility,
    build_covariates,
    classify_patient,
    generate_claims,
    label_treatment,
    log_count,
    read_timelines,
    run_pipeline,
    timelines_to_ndjson,
    weighted_sample,
    write_timelines,
)
from htekit.core import dataset_to_csv_text
from htekit.propensity import estimate_propensity, iptw_ate

MONTELUKAST = "DB00471"  # leukotriene antagonist
ALBUTEROL = "DB01001"  # beta2 agonist
THEOPHYLLINE = "DB00277"  # xanthine


def tl(pid, events, birth=1935, sex="F", race="white"):
    evs = [EventRecord(pid, d, c, MEDICATION if c.startswith("DB") else "diagnosis") for d, c in events]
    return PatientTimeline(pid, birth, sex, race, tuple(evs))


def test_event_validation():
    with pytest.raises(CohortError):
        EventRecord(1, -1, "phe:001", "diagnosis")
    with pytest.raises(CohortError):
        EventRecord(1, 0, "", "diagnosis")
    with pytest.raises(CohortError):
        EventRecord(1, 0, "x", "procedure")


def test_timeline_sorted_stably():
    p = tl(1, [(5, "phe:b"), (2, "phe:a"), (5, "phe:a")])
    assert [(e.day, e.code) for e in p.events] == [(2, "phe:a"), (5, "phe:b"), (5, "phe:a")]


def test_drug_class_map_must_be_disjoint():
    with pytest.raises(CohortError):
        DrugClassMap({"a": ["X1"], "b": ["X1", "X2"]})


@pytest.mark.parametrize(
    "events, label",
    [
        ([(10, MONTELUKAST), (40, MONTELUKAST)], STUDY),
        ([(10, ALBUTEROL)], STANDARD_OF_CARE),
        ([(10, MONTELUKAST), (20, ALBUTEROL)], EXCLUDED_MULTICLASS),
        ([(10, ALBUTEROL), (20, THEOPHYLLINE)], EXCLUDED_MULTICLASS),
        ([(10, "phe:001"), (20, "DB99999")], EXCLUDED_UNTREATED),
    ],
)
def test_treatment_labels(events, label):
    assert classify_patient(tl(1, events), DrugClassMap.default(), "leukotriene-antagonist") == label


def test_label_treatment_drops_excluded():
    spec = EligibilitySpec()
    pts = [tl(1, [(5, MONTELUKAST)]), tl(2, [(5, ALBUTEROL)]), tl(3, [(5, "phe:001")])]
    lab = label_treatment(apply_eligibility(pts, spec)[0])
    assert lab.t.tolist() == [1, 0]
    assert lab.counts == {STUDY: 1, STANDARD_OF_CARE: 1, EXCLUDED_UNTREATED: 1}


def test_parkinsons_before_start_excluded():
    spec = EligibilitySpec()
    pts = [tl(1, [(10, PARKINSONS[0]), (100, MONTELUKAST)]), tl(2, [(200, MONTELUKAST), (300, PARKINSONS[0])])]
    cohort, tally = apply_eligibility(pts, spec)
    assert [p.patient_id for p in cohort.timelines] == [2]
    assert tally["baseline-neuro-psychiatric"] == 1


def test_stroke_window():
    spec = EligibilitySpec()
    start = 3000
    old = tl(1, [(start - int(4 * DAYS_PER_YEAR), STROKE[0]), (start, MONTELUKAST)])
    recent = tl(2, [(start - int(2 * DAYS_PER_YEAR), STROKE[0]), (start, MONTELUKAST)])
    cohort, tally = apply_eligibility([old, recent], spec)
    assert [p.patient_id for p in cohort.timelines] == [1]
    assert tally["recent-stroke"] == 1


def test_empty_input():
    cohort, tally = apply_eligibility([], EligibilitySpec())
    assert cohort.timelines == () and set(tally.values()) == {0}


def test_tally_order_and_first_failure():
    spec = EligibilitySpec()
    pts = [
        tl(1, [(5, MONTELUKAST)], birth=1950),  # too young, also fine otherwise
        tl(2, [(1, AD_CODES[0]), (2, PARKINSONS[0]), (5, MONTELUKAST)]),  # prior outcome and Parkinson's
        tl(3, [(5, MONTELUKAST)]),
    ]
    cohort, tally = apply_eligibility(pts, spec)
    assert list(tally) == spec.criteria
    assert tally["born-before-cutoff"] == 1 and tally["no-prior-outcome"] == 1
    assert tally["baseline-neuro-psychiatric"] == 0
    assert len(pts) - len(cohort.timelines) == sum(tally.values())


def test_spec_round_trip():
    spec = EligibilitySpec(birth_year_cutoff=1940)
    assert EligibilitySpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(CohortError):
        EligibilitySpec.from_dict({"cutoff": 1})


def test_log_count():
    assert log_count(3) == 2.0
    assert log_count(0) == 0.0


def _filter_fixture():
    # 100 patients on one drug each; phe:rare in 4, phe:flat once for everyone,
    # phe:wide with counts 0 or 15 (log 0 or 4) for half
    pts = []
    for i in range(100):
        ev = [(1, "phe:flat"), (50, MONTELUKAST if i % 2 else ALBUTEROL)]
        if i < 4:
            ev.append((2, "phe:rare"))
        if i % 2 == 0:
            ev += [(3, "phe:wide")] * 15
        pts.append(tl(i, ev))
    return pts


def test_filters_drop_designed_columns():
    lab = label_treatment(apply_eligibility(_filter_fixture(), EligibilitySpec())[0])
    m = build_covariates(lab, prevalence_min=0.05, variance_min=0.2)
    assert m.dropped == {"prevalence": ["phe:rare"], "variance": ["phe:flat"]}
    assert m.feature_names[0] == "phe:wide"
    assert set(np.unique(m.X[:, 0])) == {0.0, 4.0}


def test_no_surviving_columns_is_an_error():
    lab = label_treatment(apply_eligibility([tl(1, [(5, MONTELUKAST)]), tl(2, [(5, ALBUTEROL)])], EligibilitySpec())[0])
    with pytest.raises(CohortError):
        build_covariates(lab)


def test_outcome_window_ends_at_onset():
    pts = [
        tl(1, [(5, MONTELUKAST), (10, "phe:x"), (20, AD_CODES[0]), (30, "phe:x")]),
        tl(2, [(5, ALBUTEROL), (10, "phe:x")]),
    ]
    m = build_covariates(label_treatment(apply_eligibility(pts, EligibilitySpec())[0]), 0.0, -1.0)
    assert m.y.tolist() == [1.0, 0.0]
    j = m.feature_names.index("phe:x")
    assert m.X[:, j].tolist() == [1.0, 1.0]  # the post-onset code is outside the window


def test_pipeline_stages_need_typed_inputs():
    with pytest.raises(CohortError):
        label_treatment([tl(1, [(5, MONTELUKAST)])])
    with pytest.raises(CohortError):
        build_covariates(apply_eligibility([], EligibilitySpec())[0])


def _matrix(t, med):
    n = len(t)
    return CohortMatrix(np.arange(n, dtype=float)[:, None], np.array(t), np.zeros(n), ("x",), np.arange(n),
                        np.asarray(med, dtype=float))


def test_sampling_reduces_imbalance():
    for seed in range(10):
        m = _matrix([1] * 20 + [0] * 200, np.ones(220))
        s = weighted_sample(m, seed)
        assert (s.n - s.t.sum()) / s.t.sum() < 10


def test_sampling_keeps_balanced_arms():
    m = _matrix([1, 0] * 100, np.ones(200))
    s = weighted_sample(m, 3)
    assert abs(s.t.mean() - 0.5) <= 0.05 * 0.5


def test_sampling_is_deterministic_and_weighted():
    m = _matrix([1] * 10 + [0] * 100, [1.0] * 10 + [0.0] * 50 + [1.0] * 50)
    a, b = weighted_sample(m, 7), weighted_sample(m, 7)
    assert np.array_equal(a.patient_ids, b.patient_ids)
    # zero-weight patients are never drawn
    assert np.all(a.patient_ids[a.t == 0] >= 60)
    with pytest.raises(CohortError):
        weighted_sample(a, 0)


def test_sampling_needs_both_arms():
    with pytest.raises(SamplingError):
        weighted_sample(_matrix([1, 1, 1], np.ones(3)), 0)


def test_generator_validation():
    with pytest.raises(CohortError):
        ClaimsParams(n_codes=5).validate()
    with pytest.raises(CohortError):
        generate_claims(ClaimsParams(effect=EffectModel(code_a="phe:999")))
    with pytest.raises(CohortError):
        ClaimsParams.from_dict({"patients": 3})


def test_generator_deterministic_and_ndjson_round_trip(tmp_path):
    p = ClaimsParams(n_patients=50)
    a, b = generate_claims(p, 4), generate_claims(p, 4)
    assert timelines_to_ndjson(a) == timelines_to_ndjson(b)
    write_timelines(tmp_path / "t.ndjson", a)
    assert read_timelines(tmp_path / "t.ndjson") == a


def test_pipeline_determinism_and_truth_threading():
    tls = generate_claims(ClaimsParams(n_patients=2000), 1)
    r1, r2 = run_pipeline(tls, seed=5), run_pipeline(tls, seed=5)
    ds = r1.matrix.to_dataset()
    assert dataset_to_csv_text(ds) == dataset_to_csv_text(r2.matrix.to_dataset())
    assert ds.truth is not None and ds.truth.tau.shape == (ds.n,)
    s = r1.summary()
    assert s["n_input"] - s["n_eligible"] == sum(s["exclusions"].values())
    assert sum(r1.split().sizes) == ds.n


def _cohort_iptw(coef, seed):
    tls = generate_claims(ClaimsParams(n_patients=20000, effect=EffectModel(coef_a=coef)), seed)
    ds = run_pipeline(tls, seed=seed).matrix.to_dataset()
    e = np.asarray(estimate_propensity(ds, seed=seed))
    a = ds.X[:, ds.feature_names.index("phe:001")] > 0

    def sub(mask):
        return iptw_ate(ds.subset(np.flatnonzero(mask)), e[mask]).value

    return iptw_ate(ds, e).value, sub(a) - sub(~a)


@pytest.mark.slow
def test_null_effect_end_to_end():
    ates = [_cohort_iptw(0.0, s)[0] for s in range(5)]
    assert abs(np.median(ates)) < 0.03


@pytest.mark.slow
def test_subgroup_contrast_end_to_end():
    contrasts = [_cohort_iptw(0.3, s)[1] for s in range(5)]
    assert abs(np.median(contrasts) - 0.3) <= 0.05
