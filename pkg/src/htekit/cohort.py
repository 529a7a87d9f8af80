"""Synthetic claims data and the target-trial cohort pipeline.

Stages run in a fixed order, each consuming the type the previous one
produced::

    timelines -> apply_eligibility -> EligibleCohort
              -> label_treatment   -> LabeledCohort
              -> build_covariates  -> CohortMatrix
              -> weighted_sample   -> CohortMatrix (sampled)
              -> split

Codes are already grouped (``phe:NNN`` diagnosis groups, ``DBnnnnn`` drugs).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import GroundTruth, ObservationalDataset, atomic_write_text, derive_seeds, rng_from, split

DIAGNOSIS = "diagnosis"
MEDICATION = "medication"
DAYS_PER_YEAR = 365.25

STUDY = "study"
STANDARD_OF_CARE = "standard-of-care"
EXCLUDED_MULTICLASS = "excluded-multiclass"
EXCLUDED_UNTREATED = "excluded-untreated"

DEFAULT_DRUG_CLASSES = {
    "beta2-agonist": (
        "DB01001", "DB13139", "DB09082", "DB01274", "DB15784", "DB05039",
        "DB00816", "DB12846", "DB00938", "DB00871", "DB00983",
    ),
    "anticholinergic": ("DB09076", "DB00332"),
    "xanthine": ("DB00277", "DB01303", "DB01223"),
    "corticosteroid": ("DB13867", "DB01222", "DB00764", "DB00394", "DB00180", "DB01410"),
    "leukotriene-antagonist": ("DB00471", "DB00744", "DB00549", "DB01411"),
}
DEFAULT_STUDY_CLASS = "leukotriene-antagonist"

# default grouped diagnosis codes for the outcome and the exclusion criteria
AD_CODES = ("phe:290.11", "phe:290.1")
DEPRESSION = ("phe:296.2",)
SCHIZOPHRENIA = ("phe:295.1",)
PARKINSONS = ("phe:332",)
MULTIPLE_SCLEROSIS = ("phe:335",)
STROKE = ("phe:433", "phe:433.1")
INTRACRANIAL_PRESSURE = ("phe:348.2",)

RACES = ("asian", "black", "hispanic", "other", "white")


class CohortError(ValueError):
    pass


class SamplingError(CohortError):
    pass


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventRecord:
    patient_id: int
    day: int
    code: str
    system: str

    def __post_init__(self):
        if self.day < 0:
            raise CohortError(f"event day must be >= 0, got {self.day}")
        if not self.code:
            raise CohortError("event code must be non-empty")
        if self.system not in (DIAGNOSIS, MEDICATION):
            raise CohortError(f"unknown code system {self.system!r}")


@dataclass(frozen=True)
class PatientTimeline:
    """One patient's demographics and day-ordered events.

    ``truth`` optionally carries generator ground truth (``mu0``, ``mu1``,
    ``propensity``) so effects survive the whole pipeline.
    """

    patient_id: int
    birth_year: int
    sex: str
    race: str
    events: tuple = ()
    truth: Optional[dict] = None

    def __post_init__(self):
        # sorted() is stable, so equal days keep insertion order
        ev = tuple(sorted(self.events, key=lambda e: e.day))
        for e in ev:
            if e.patient_id != self.patient_id:
                raise CohortError(f"event for patient {e.patient_id} in timeline of {self.patient_id}")
        object.__setattr__(self, "events", ev)

    def to_json(self) -> str:
        obj = {
            "patient_id": self.patient_id,
            "birth_year": self.birth_year,
            "sex": self.sex,
            "race": self.race,
            "events": [{"day": e.day, "code": e.code, "system": e.system} for e in self.events],
        }
        if self.truth is not None:
            obj["truth"] = self.truth
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "PatientTimeline":
        obj = json.loads(line)
        pid = int(obj["patient_id"])
        events = [EventRecord(pid, int(e["day"]), e["code"], e["system"]) for e in obj["events"]]
        return cls(pid, int(obj["birth_year"]), obj["sex"], obj["race"], tuple(events), obj.get("truth"))


def timelines_to_ndjson(timelines) -> str:
    return "".join(t.to_json() + "\n" for t in timelines)


def write_timelines(path, timelines):
    atomic_write_text(path, timelines_to_ndjson(timelines))


def read_timelines(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [PatientTimeline.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class DrugClassMap:
    classes: dict

    def __post_init__(self):
        classes = {k: frozenset(v) for k, v in self.classes.items()}
        seen = {}
        for name, codes in classes.items():
            if not codes:
                raise CohortError(f"drug class {name!r} is empty")
            for c in codes:
                if c in seen:
                    raise CohortError(f"drug {c} appears in both {seen[c]!r} and {name!r}")
                seen[c] = name
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "_lookup", seen)

    @classmethod
    def default(cls) -> "DrugClassMap":
        return cls(DEFAULT_DRUG_CLASSES)

    def class_of(self, code: str) -> Optional[str]:
        return self._lookup.get(code)

    @property
    def all_codes(self) -> frozenset:
        return frozenset(self._lookup)


# ---------------------------------------------------------------------------
# Eligibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Exclusion:
    """Exclude patients with any of ``codes`` before follow-up start.

    With ``window_years`` set, only events within that many years before the
    start count.
    """

    name: str
    codes: frozenset
    window_years: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "codes", frozenset(self.codes))
        if not self.codes:
            raise CohortError(f"exclusion {self.name!r} has no codes")
        if self.window_years is not None and self.window_years <= 0:
            raise CohortError(f"exclusion {self.name!r}: window must be positive")


def _default_exclusions():
    return (
        Exclusion("baseline-neuro-psychiatric", DEPRESSION + SCHIZOPHRENIA + PARKINSONS + MULTIPLE_SCLEROSIS),
        Exclusion("recent-stroke", STROKE, 3.0),
        Exclusion("intracranial-pressure", INTRACRANIAL_PRESSURE),
    )


@dataclass(frozen=True)
class EligibilitySpec:
    """Eligibility criteria, checked in order:

    birth year before ``birth_year_cutoff``; no outcome code before follow-up
    start; then each :class:`Exclusion` in ``exclusions``.
    """

    birth_year_cutoff: int = 1942
    outcome_codes: frozenset = frozenset(AD_CODES)
    exclusions: tuple = field(default_factory=_default_exclusions)
    drug_classes: DrugClassMap = field(default_factory=DrugClassMap.default)
    study_class: str = DEFAULT_STUDY_CLASS
    start_year: int = 2007

    def __post_init__(self):
        object.__setattr__(self, "outcome_codes", frozenset(self.outcome_codes))
        if not self.outcome_codes:
            raise CohortError("outcome code set is empty")
        if self.study_class not in self.drug_classes.classes:
            raise CohortError(f"study class {self.study_class!r} not in the drug class map")
        names = [e.name for e in self.exclusions]
        if len(set(names)) != len(names):
            raise CohortError("exclusion names must be unique")

    @property
    def criteria(self) -> list:
        return ["born-before-cutoff", "no-prior-outcome"] + [e.name for e in self.exclusions]

    @classmethod
    def from_dict(cls, obj: dict) -> "EligibilitySpec":
        obj = dict(obj)
        known = {"birth_year_cutoff", "outcome_codes", "exclusions", "drug_classes", "study_class", "start_year"}
        unknown = set(obj) - known
        if unknown:
            raise CohortError(f"unknown eligibility key(s): {sorted(unknown)}")
        if "exclusions" in obj:
            obj["exclusions"] = tuple(
                Exclusion(e["name"], frozenset(e["codes"]), e.get("window_years")) for e in obj["exclusions"]
            )
        if "drug_classes" in obj:
            obj["drug_classes"] = DrugClassMap(obj["drug_classes"])
        if "outcome_codes" in obj:
            obj["outcome_codes"] = frozenset(obj["outcome_codes"])
        return cls(**obj)

    def to_dict(self) -> dict:
        return {
            "birth_year_cutoff": self.birth_year_cutoff,
            "outcome_codes": sorted(self.outcome_codes),
            "exclusions": [
                {"name": e.name, "codes": sorted(e.codes), "window_years": e.window_years} for e in self.exclusions
            ],
            "drug_classes": {k: sorted(v) for k, v in self.drug_classes.classes.items()},
            "study_class": self.study_class,
            "start_year": self.start_year,
        }


def follow_up_start(timeline: PatientTimeline, drug_classes: DrugClassMap) -> int:
    """Day of the first anti-asthma prescription; the last event day (or 0)
    for patients who never receive one."""
    codes = drug_classes.all_codes
    for e in timeline.events:
        if e.system == MEDICATION and e.code in codes:
            return e.day
    return timeline.events[-1].day if timeline.events else 0


def _first_failure(tl: PatientTimeline, spec: EligibilitySpec, start: int) -> Optional[str]:
    if tl.birth_year >= spec.birth_year_cutoff:
        return "born-before-cutoff"
    before = [e for e in tl.events if e.system == DIAGNOSIS and e.day < start]
    if any(e.code in spec.outcome_codes for e in before):
        return "no-prior-outcome"
    for ex in spec.exclusions:
        lo = -math.inf if ex.window_years is None else start - ex.window_years * DAYS_PER_YEAR
        if any(e.code in ex.codes and e.day >= lo for e in before):
            return ex.name
    return None


@dataclass(frozen=True)
class EligibleCohort:
    timelines: tuple
    starts: dict
    spec: EligibilitySpec


def apply_eligibility(timelines, spec: EligibilitySpec):
    """Keep patients meeting every criterion at follow-up start.

    Returns ``(EligibleCohort, tally)``; ``tally`` maps each criterion, in
    order, to the number of patients it removed (first failing criterion).
    """
    tally = {name: 0 for name in spec.criteria}
    kept = []
    starts = {}
    for tl in timelines:
        start = follow_up_start(tl, spec.drug_classes)
        reason = _first_failure(tl, spec, start)
        if reason is None:
            kept.append(tl)
            starts[tl.patient_id] = start
        else:
            tally[reason] += 1
    return EligibleCohort(tuple(kept), starts, spec), tally


# ---------------------------------------------------------------------------
# Treatment labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledCohort:
    """Eligible patients with a study (1) or standard-of-care (0) label."""

    timelines: tuple
    t: np.ndarray
    labels: dict
    starts: dict
    spec: EligibilitySpec

    @property
    def counts(self) -> dict:
        return dict(Counter(self.labels.values()))


def classify_patient(timeline: PatientTimeline, drug_classes: DrugClassMap, study_class: str) -> str:
    used = {drug_classes.class_of(e.code) for e in timeline.events if e.system == MEDICATION}
    used.discard(None)
    if not used:
        return EXCLUDED_UNTREATED
    if len(used) > 1:
        return EXCLUDED_MULTICLASS
    return STUDY if study_class in used else STANDARD_OF_CARE


def label_treatment(cohort: EligibleCohort, class_map: Optional[DrugClassMap] = None, study_class=None) -> LabeledCohort:
    """Label each eligible patient; multi-class and untreated patients are dropped."""
    if not isinstance(cohort, EligibleCohort):
        raise CohortError("label_treatment expects the output of apply_eligibility")
    class_map = class_map or cohort.spec.drug_classes
    study_class = study_class or cohort.spec.study_class
    if study_class not in class_map.classes:
        raise CohortError(f"study class {study_class!r} not in the drug class map")
    labels = {}
    kept, t = [], []
    for tl in cohort.timelines:
        lab = classify_patient(tl, class_map, study_class)
        labels[tl.patient_id] = lab
        if lab in (STUDY, STANDARD_OF_CARE):
            kept.append(tl)
            t.append(1 if lab == STUDY else 0)
    return LabeledCohort(tuple(kept), np.array(t, dtype=np.int8), labels, cohort.starts, cohort.spec)


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------

def log_count(count):
    return np.log2(1.0 + np.asarray(count, dtype=float))


def age_at(day, birth_year, start_year) -> float:
    return start_year + day / DAYS_PER_YEAR - birth_year


@dataclass(frozen=True)
class CohortMatrix:
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    feature_names: tuple
    patient_ids: np.ndarray
    med_log_count: np.ndarray
    truth: Optional[GroundTruth] = None
    dropped: dict = field(default_factory=dict)
    sampled: bool = False

    @property
    def n(self) -> int:
        return len(self.t)

    def take(self, idx, sampled=None) -> "CohortMatrix":
        idx = np.asarray(idx)
        return CohortMatrix(
            self.X[idx], self.t[idx], self.y[idx], self.feature_names, self.patient_ids[idx],
            self.med_log_count[idx], None if self.truth is None else self.truth.subset(idx),
            self.dropped, self.sampled if sampled is None else sampled,
        )

    def to_dataset(self) -> ObservationalDataset:
        meta = {"source": "cohort", "sampled": self.sampled, "dropped": self.dropped,
                "patient_ids": [int(p) for p in self.patient_ids]}
        return ObservationalDataset(self.X, self.t, self.y, self.feature_names, self.truth, meta)


def _window_counts(tl: PatientTimeline, start: int, outcome_codes) -> tuple:
    """Diagnosis counts within the observation window and the outcome flag.

    The window runs from the first event to the first outcome code after
    follow-up start (exclusive), or to the last event.
    """
    end = math.inf
    outcome = 0
    for e in tl.events:
        if e.system == DIAGNOSIS and e.code in outcome_codes and e.day >= start:
            end, outcome = e.day, 1
            break
    counts = Counter(
        e.code for e in tl.events if e.system == DIAGNOSIS and e.day < end and e.code not in outcome_codes
    )
    return counts, outcome


def build_covariates(cohort: LabeledCohort, prevalence_min: float = 0.05, variance_min: float = 0.2) -> CohortMatrix:
    """Log-count code features filtered by prevalence then variance, plus demographics."""
    if not isinstance(cohort, LabeledCohort):
        raise CohortError("build_covariates expects the output of label_treatment")
    spec = cohort.spec
    n = len(cohort.timelines)
    if n == 0:
        raise CohortError("no labeled patients to build covariates from")
    per_patient, y, med = [], [], []
    drug_codes = spec.drug_classes.all_codes
    for tl in cohort.timelines:
        counts, outcome = _window_counts(tl, cohort.starts[tl.patient_id], spec.outcome_codes)
        per_patient.append(counts)
        y.append(outcome)
        med.append(sum(1 for e in tl.events if e.system == MEDICATION and e.code in drug_codes))
    codes = sorted(set().union(*per_patient))
    C = np.zeros((n, len(codes)))
    col = {c: j for j, c in enumerate(codes)}
    for i, counts in enumerate(per_patient):
        for c, k in counts.items():
            C[i, col[c]] = k
    L = log_count(C)
    prevalence = (C > 0).mean(axis=0)
    keep_prev = prevalence > prevalence_min
    dropped_prev = [c for c, k in zip(codes, keep_prev) if not k]
    L, codes = L[:, keep_prev], [c for c, k in zip(codes, keep_prev) if k]
    keep_var = L.var(axis=0) > variance_min
    dropped_var = [c for c, k in zip(codes, keep_var) if not k]
    L, codes = L[:, keep_var], [c for c, k in zip(codes, keep_var) if k]
    if not codes:
        raise CohortError("no code columns survive the prevalence and variance filters")

    age = np.array([age_at(cohort.starts[tl.patient_id], tl.birth_year, spec.start_year) for tl in cohort.timelines])
    female = np.array([1.0 if tl.sex == "F" else 0.0 for tl in cohort.timelines])
    races = sorted({tl.race for tl in cohort.timelines})
    race = np.array([[1.0 if tl.race == r else 0.0 for r in races] for tl in cohort.timelines]).reshape(n, len(races))
    X = np.hstack([L, age[:, None], female[:, None], race])
    names = tuple(codes) + ("age", "sex_female") + tuple(f"race_{r}" for r in races)

    truth = None
    if all(tl.truth is not None for tl in cohort.timelines):
        truth = GroundTruth(
            np.array([tl.truth["mu0"] for tl in cohort.timelines]),
            np.array([tl.truth["mu1"] for tl in cohort.timelines]),
            np.array([tl.truth["propensity"] for tl in cohort.timelines]),
        )
    return CohortMatrix(
        X, cohort.t.copy(), np.array(y, dtype=float), names,
        np.array([tl.patient_id for tl in cohort.timelines]), log_count(med), truth,
        {"prevalence": dropped_prev, "variance": dropped_var},
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def weighted_sample(matrix: CohortMatrix, seed: int = 0, max_ratio: float = 1.5) -> CohortMatrix:
    """Downsample the larger arm to at most ``max_ratio`` times the smaller.

    Majority-arm patients are drawn without replacement with probability
    proportional to their log2(1 + medication count). The minority arm is
    kept whole and row order is preserved.
    """
    if not isinstance(matrix, CohortMatrix):
        raise CohortError("weighted_sample expects a CohortMatrix")
    if matrix.sampled:
        raise CohortError("cohort matrix has already been sampled")
    if max_ratio < 1:
        raise CohortError("max_ratio must be >= 1")
    n1 = int(matrix.t.sum())
    n0 = matrix.n - n1
    if n0 == 0 or n1 == 0:
        raise SamplingError("both treatment arms must be present before sampling")
    major = 1 if n1 > n0 else 0
    maj_idx = np.flatnonzero(matrix.t == major)
    min_idx = np.flatnonzero(matrix.t != major)
    target = min(len(maj_idx), int(math.floor(max_ratio * len(min_idx))))
    if target < 1:
        raise SamplingError("sampling would empty the majority arm")
    if target < len(maj_idx):
        w = matrix.med_log_count[maj_idx]
        if w.sum() <= 0:
            raise SamplingError("medication weights are all zero")
        chosen = rng_from(seed).choice(maj_idx, size=target, replace=False, p=w / w.sum())
        maj_idx = chosen
    idx = np.sort(np.concatenate([min_idx, maj_idx]))
    return matrix.take(idx, sampled=True)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class CohortResult:
    matrix: CohortMatrix
    tally: dict
    label_counts: dict
    n_input: int
    n_eligible: int
    n_prefilter: int

    def split(self, ratio=(6, 2, 2), seed: int = 0):
        return split(self.matrix.n, ratio, seed)

    def summary(self) -> dict:
        return {
            "n_input": self.n_input,
            "exclusions": self.tally,
            "n_eligible": self.n_eligible,
            "labels": self.label_counts,
            "n_labeled": self.n_prefilter,
            "n_final": self.matrix.n,
            "n_study": int(self.matrix.t.sum()),
            "features": len(self.matrix.feature_names),
            "dropped_prevalence": len(self.matrix.dropped.get("prevalence", [])),
            "dropped_variance": len(self.matrix.dropped.get("variance", [])),
        }


def run_pipeline(timelines, spec: Optional[EligibilitySpec] = None, prevalence_min=0.05, variance_min=0.2,
                 seed: int = 0, sample=True, max_ratio=1.5) -> CohortResult:
    """Eligibility, labels, covariates and weighted sampling, in that order."""
    spec = spec or EligibilitySpec()
    timelines = list(timelines)
    eligible, tally = apply_eligibility(timelines, spec)
    labeled = label_treatment(eligible)
    matrix = build_covariates(labeled, prevalence_min, variance_min)
    if sample:
        matrix = weighted_sample(matrix, seed, max_ratio)
    return CohortResult(matrix, tally, labeled.counts, len(timelines), len(eligible.timelines), len(labeled.timelines))


# ---------------------------------------------------------------------------
# Synthetic claims generator
# ---------------------------------------------------------------------------

def _expit(z):
    return 1.0 / (1.0 + math.exp(-z))


@dataclass(frozen=True)
class EffectModel:
    """Risk-difference effect ``base + coef_a * 1{code_a} + coef_b * 1{code_b}``."""

    base: float = 0.0
    code_a: str = "phe:001"
    coef_a: float = 0.0
    code_b: str = "phe:002"
    coef_b: float = 0.0

    def tau(self, present: set) -> float:
        return self.base + self.coef_a * (self.code_a in present) + self.coef_b * (self.code_b in present)


@dataclass(frozen=True)
class ClaimsParams:
    """Generator settings.

    The vocabulary is ``phe:000`` .. ``phe:{n_codes-1}``. ``phe:000`` appears
    exactly once for everyone; the others have prevalences falling linearly
    from 0.5 to 0.02. ``phe:003`` confounds: it raises both baseline risk and
    the chance of receiving the study class.
    """

    n_patients: int = 5000
    n_codes: int = 40
    effect: EffectModel = EffectModel()
    start_year: int = 2007
    years: int = 13
    birth_years: tuple = (1920, 1950)
    untreated_rate: float = 0.08
    multiclass_rate: float = 0.10
    exclusion_rate: float = 0.03
    confounding: float = 1.0

    @classmethod
    def from_dict(cls, obj: dict) -> "ClaimsParams":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise CohortError(f"unknown generator key(s): {sorted(unknown)}")
        if "effect" in obj:
            eff = obj["effect"]
            bad = set(eff) - set(EffectModel.__dataclass_fields__)
            if bad:
                raise CohortError(f"unknown effect key(s): {sorted(bad)}")
            obj["effect"] = EffectModel(**eff)
        if "birth_years" in obj:
            obj["birth_years"] = tuple(obj["birth_years"])
        return cls(**obj)

    @property
    def vocabulary(self) -> tuple:
        return tuple(f"phe:{k:03d}" for k in range(self.n_codes))

    def prevalence(self) -> np.ndarray:
        return np.concatenate([[1.0], np.linspace(0.5, 0.02, self.n_codes - 1)])

    def validate(self):
        if self.n_codes < 10:
            raise CohortError("the code vocabulary needs at least 10 codes")
        vocab = set(self.vocabulary)
        for code in (self.effect.code_a, self.effect.code_b):
            if code not in vocab:
                raise CohortError(f"effect model references {code!r}, which is not in the vocabulary")
            if code == "phe:000":
                raise CohortError("effect model cannot use the universal code phe:000")
        if self.n_patients < 1:
            raise CohortError("n_patients must be positive")


def _baseline_risk(age, log_conf):
    return min(max(0.35 + 0.08 * log_conf + 0.01 * (age - 75.0), 0.15), 0.65)


def _study_propensity(age, log_conf, strength):
    return min(max(_expit(strength * (-0.4 + 0.6 * log_conf - 0.03 * (age - 75.0))), 0.05), 0.95)


def generate_claims(params: ClaimsParams = ClaimsParams(), seed: int = 0) -> list:
    """Seeded synthetic claim timelines with an embedded treatment effect.

    Comorbidities precede the first anti-asthma prescription (the index day).
    Each patient's ``truth`` holds the outcome risks under both arms and the
    probability of receiving the study class.
    """
    params.validate()
    rng = rng_from(derive_seeds(seed, 1)[0])
    vocab = params.vocabulary
    prev = params.prevalence()
    classes = DEFAULT_DRUG_CLASSES
    other_classes = [c for c in classes if c != DEFAULT_STUDY_CLASS]
    horizon = int(params.years * 365)
    out = []
    for pid in range(params.n_patients):
        birth = int(rng.integers(params.birth_years[0], params.birth_years[1] + 1))
        sex = "F" if rng.random() < 0.55 else "M"
        race = RACES[int(rng.integers(len(RACES)))]
        index = int(rng.integers(730, horizon - 1460))
        events = []

        def add(day, code, system=DIAGNOSIS):
            events.append(EventRecord(pid, int(day), code, system))

        present = set()
        log_conf = 0.0
        for k, code in enumerate(vocab):
            if k == 0:
                add(rng.integers(0, index), code)
                present.add(code)
                continue
            if rng.random() < prev[k]:
                count = 1 + int(rng.poisson(1.5))
                for day in rng.integers(0, index, size=count):
                    add(day, code)
                present.add(code)
                if k == 3:
                    log_conf = float(np.log2(1 + count))

        # exclusion-relevant history, some before and some after the index day
        r = params.exclusion_rate
        for codes in (DEPRESSION, SCHIZOPHRENIA, PARKINSONS, MULTIPLE_SCLEROSIS, INTRACRANIAL_PRESSURE, AD_CODES):
            if rng.random() < r:
                add(rng.integers(0, index), codes[0])
            if rng.random() < r:
                add(rng.integers(index + 1, horizon), codes[0])
        if rng.random() < 2 * r:
            add(rng.integers(0, index), STROKE[0])

        age = age_at(index, birth, params.start_year)
        e = _study_propensity(age, log_conf, params.confounding)
        mu0 = _baseline_risk(age, log_conf)
        mu1 = min(max(mu0 + params.effect.tau(present), 0.0), 1.0)

        u = rng.random()
        treated = rng.random() < e
        if u < params.untreated_rate:
            drug_classes = []
        else:
            first = DEFAULT_STUDY_CLASS if treated else other_classes[int(rng.integers(len(other_classes)))]
            drug_classes = [first]
            if u < params.untreated_rate + params.multiclass_rate:
                drug_classes.append([c for c in classes if c != first][int(rng.integers(len(classes) - 1))])
        for j, cls in enumerate(drug_classes):
            codes = classes[cls]
            n_rx = 1 + int(rng.poisson(3.0))
            days = [index + 30 * j] + list(rng.integers(index + 30 * j + 1, index + 730, size=n_rx - 1))
            for day in days:
                add(day, codes[int(rng.integers(len(codes)))], MEDICATION)

        p_outcome = mu1 if (drug_classes and drug_classes[0] == DEFAULT_STUDY_CLASS) else mu0
        if rng.random() < p_outcome:
            add(index + int(rng.integers(180, 1460)), AD_CODES[0])
        out.append(PatientTimeline(pid, birth, sex, race, tuple(events),
                                   {"mu0": mu0, "mu1": mu1, "propensity": e}))
    return out
