"""Observational dataset container, validation, splitting and seeding helpers."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Structural problem with an observational dataset."""


class PositivityError(ValueError):
    """An estimator needed both treatment arms but one is empty."""


class SplitError(ValueError):
    """Requested split cannot be realized for the dataset size."""


def rng_from(seed) -> np.random.Generator:
    """Build a generator from an explicit seed (int or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seeds(seed: int, count: int) -> list[int]:
    """Derive ``count`` independent child seeds from a master seed."""
    ss = np.random.SeedSequence(int(seed))
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(count)]


@dataclass(frozen=True)
class GroundTruth:
    """Expected potential outcomes for synthetic data.

    ``y0`` and ``y1`` are the conditional means of the potential outcomes, so
    ``tau`` is the true conditional effect. For noiseless generators they are
    also the realized outcomes.
    """

    y0: np.ndarray
    y1: np.ndarray
    true_propensity: Optional[np.ndarray] = None

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float)
        y1 = np.asarray(self.y1, dtype=float)
        if y0.shape != y1.shape or y0.ndim != 1:
            raise DatasetError("y0 and y1 must be 1-D vectors of equal length")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        if self.true_propensity is not None:
            e = np.asarray(self.true_propensity, dtype=float)
            if e.shape != y0.shape:
                raise DatasetError("true_propensity length mismatch")
            if np.any((e <= 0) | (e >= 1)):
                raise DatasetError("true_propensity must lie strictly inside (0, 1)")
            object.__setattr__(self, "true_propensity", e)

    @property
    def tau(self) -> np.ndarray:
        return self.y1 - self.y0

    def subset(self, idx) -> "GroundTruth":
        e = None if self.true_propensity is None else self.true_propensity[idx]
        return GroundTruth(self.y0[idx], self.y1[idx], e)


@dataclass(frozen=True)
class ObservationalDataset:
    """Covariates ``X``, binary treatment ``t`` and outcome ``y``.

    Binary outcomes are carried as 0/1 floats so that regression and
    classification learners can share the same data.
    """

    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()
    truth: Optional[GroundTruth] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.asarray(self.t)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise DatasetError("covariates must be a 2-D matrix")
        n = X.shape[0]
        if n < 1:
            raise DatasetError("dataset must contain at least one row")
        if t.ndim != 1 or len(t) != n or len(y) != n:
            raise DatasetError(
                f"length mismatch: covariates={n}, treatment={len(t)}, outcome={len(y)}"
            )
        if not np.all(np.isfinite(X)):
            raise DatasetError("covariates contain non-finite entries")
        if not np.all(np.isfinite(y)):
            raise DatasetError("outcome contains non-finite entries")
        if not np.all(np.isin(t, (0, 1))):
            raise DatasetError("treatment must contain only 0 and 1")
        t = t.astype(np.int8)
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DatasetError("feature_names length does not match covariate columns")
        if self.truth is not None and len(self.truth.y0) != n:
            raise DatasetError("ground truth length mismatch")
        for a in (X, t, y):
            a.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def treated_fraction(self) -> float:
        return float(self.t.mean())

    def subset(self, idx) -> "ObservationalDataset":
        idx = np.asarray(idx)
        truth = None if self.truth is None else self.truth.subset(idx)
        return ObservationalDataset(
            self.X[idx], self.t[idx], self.y[idx], self.feature_names, truth, dict(self.metadata)
        )

    def require_both_arms(self, what: str = "estimator"):
        n1 = int(self.t.sum())
        if n1 == 0 or n1 == self.n:
            arm = "treated" if n1 == 0 else "control"
            raise PositivityError(f"{what} requires both arms; {arm} arm is empty")


@dataclass(frozen=True)
class ValidationReport:
    n: int
    d: int
    n_treated: int
    n_control: int
    flags: tuple

    @property
    def ok(self) -> bool:
        return not self.flags

    @property
    def arms(self) -> dict:
        return {"treated": self.n_treated, "control": self.n_control}


def validate(dataset: ObservationalDataset) -> ValidationReport:
    """Summarize a dataset and flag soft problems.

    Structural problems (length mismatch, non-finite values, non-binary
    treatment) are rejected when the dataset is constructed; this function only
    reports conditions an estimator might trip over later.
    """
    n1 = int(dataset.t.sum())
    n0 = dataset.n - n1
    flags = []
    if n0 == 0:
        flags.append("control arm empty")
    if n1 == 0:
        flags.append("treated arm empty")
    if dataset.n > 1:
        const = np.flatnonzero(np.ptp(dataset.X, axis=0) == 0)
    else:
        const = np.arange(dataset.d)
    for j in const:
        flags.append(f"constant column {dataset.feature_names[j]}")
    if dataset.truth is not None:
        e = dataset.truth.true_propensity
        if e is not None and (e.min() < 1e-3 or e.max() > 1 - 1e-3):
            flags.append("true propensity near 0 or 1")
    return ValidationReport(dataset.n, dataset.d, n1, n0, tuple(flags))


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @property
    def sizes(self) -> tuple:
        return len(self.train), len(self.validation), len(self.test)


def split_sizes(n: int, ratio: Sequence[float]) -> tuple:
    """Allocate ``n`` rows to (train, validation, test).

    Each part gets ``floor(n * r / sum(r))``; leftover rows go to train, then
    validation, then test, skipping parts with a zero ratio.
    """
    r = np.asarray(ratio, dtype=float)
    if r.shape != (3,) or np.any(r < 0) or r.sum() <= 0:
        raise SplitError("ratio must be three non-negative numbers with a positive sum")
    nonzero = r > 0
    if n < int(nonzero.sum()):
        raise SplitError(f"cannot split {n} rows into {int(nonzero.sum())} non-empty parts")
    sizes = np.floor(n * r / r.sum()).astype(int)
    leftover = n - int(sizes.sum())
    order = [k for k in range(3) if nonzero[k]]
    k = 0
    while leftover > 0:
        sizes[order[k % len(order)]] += 1
        leftover -= 1
        k += 1
    # a nonzero part can floor to zero on tiny inputs; borrow from the largest
    for k in order:
        if sizes[k] == 0:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[k] += 1
    return tuple(int(s) for s in sizes)


def split(dataset_or_n, ratio=(6, 2, 2), seed: int = 0) -> SplitIndices:
    """Random train/validation/test partition, deterministic under ``seed``."""
    n = dataset_or_n if isinstance(dataset_or_n, (int, np.integer)) else dataset_or_n.n
    n_tr, n_va, _ = split_sizes(int(n), ratio)
    perm = rng_from(seed).permutation(int(n))
    return SplitIndices(
        np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]), np.sort(perm[n_tr + n_va:])
    )


def kfold_indices(n: int, k: int, seed) -> np.ndarray:
    """Fold id per row, as balanced as possible."""
    if k < 2 or k > n:
        raise SplitError(f"need 2 <= folds <= n, got folds={k}, n={n}")
    folds = np.arange(n) % k
    return rng_from(seed).permutation(folds)


def stratified_kfold_indices(labels, k: int, seed) -> np.ndarray:
    """Fold ids that spread each label value evenly across folds."""
    labels = np.asarray(labels)
    rng = rng_from(seed)
    folds = np.empty(len(labels), dtype=int)
    offset = 0
    for value in np.unique(labels):
        idx = np.flatnonzero(labels == value)
        idx = rng.permutation(idx)
        folds[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return folds


# ---------------------------------------------------------------------------
# File format: CSV with t, y, x0..x{d-1} [, y0, y1, e_true] plus JSON sidecar
# ---------------------------------------------------------------------------

def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_to_csv_text(ds: ObservationalDataset) -> str:
    cols = ["t", "y"] + [f"x{j}" for j in range(ds.d)]
    has_truth = ds.truth is not None
    has_e = has_truth and ds.truth.true_propensity is not None
    if has_truth:
        cols += ["y0", "y1"]
    if has_e:
        cols += ["e_true"]
    lines = [",".join(cols)]
    for i in range(ds.n):
        row = [str(int(ds.t[i])), _fmt(ds.y[i])] + [_fmt(v) for v in ds.X[i]]
        if has_truth:
            row += [_fmt(ds.truth.y0[i]), _fmt(ds.truth.y1[i])]
        if has_e:
            row.append(_fmt(ds.truth.true_propensity[i]))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_dataset(ds: ObservationalDataset, path, provenance: Optional[dict] = None):
    """Write the CSV file and a ``.json`` sidecar next to it."""
    path = Path(path)
    atomic_write_text(path, dataset_to_csv_text(ds))
    meta = {"feature_names": list(ds.feature_names), "n": ds.n, "d": ds.d}
    meta.update(provenance if provenance is not None else ds.metadata)
    atomic_write_text(path.with_suffix(".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_dataset(path) -> ObservationalDataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader if r]
    if not {"t", "y"} <= set(header):
        raise DatasetError(f"{path}: CSV needs 't' and 'y' columns")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    col = {name: k for k, name in enumerate(header)}
    xcols = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    X = data[:, [col[c] for c in xcols]]
    truth = None
    if "y0" in col and "y1" in col:
        e = data[:, col["e_true"]] if "e_true" in col else None
        truth = GroundTruth(data[:, col["y0"]], data[:, col["y1"]], e)
    meta = {}
    names = ()
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        names = tuple(meta.get("feature_names", ()))
    t = data[:, col["t"]]
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise DatasetError(f"{path}: column t must be 0/1")
    return ObservationalDataset(X, t.astype(int), data[:, col["y"]], names, truth, meta)
