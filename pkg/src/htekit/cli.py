"""Command-line front end.

    htekit generate   --config gen.json   --out data/
    htekit cohort     --config cohort.json --out cohort/
    htekit benchmark  --config run.json   --out results/ --workers 2
    htekit importance --config imp.json   --out results/

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cohort as coh
from . import synthetic
from .core import atomic_write_text, derive_seeds, read_dataset, split, write_dataset
from .estimators import EstimatorConfig, EstimatorConfigError, fit_estimator
from .evaluation import (
    METRICS,
    EvaluationReport,
    MissingGroundTruthError,
    build_if_pehe_context,
    evaluate,
    report_csv,
    sort_reports,
)
from .importance import ImportanceError, permutation_importance, shapley_report
from .learners import LearnerError, LearnerSpec, fit_classifier
from .propensity import auroc, estimate_propensity


class ConfigError(ValueError):
    """Bad configuration or unmet precondition; exit code 2."""


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")


def _write_json(path, obj, sort_keys=True):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=sort_keys) + "\n")


# ---------------------------------------------------------------------------
# data sources
# ---------------------------------------------------------------------------

COHORT_KEYS = {"seed", "generator", "timelines", "eligibility", "prevalence_min", "variance_min", "sampling"}


def _cohort_pipeline(cfg, seed, out=None):
    """Run the cohort pipeline from a config; optionally write its artifacts."""
    _check_keys(cfg, COHORT_KEYS, "cohort")
    gen_seed, sample_seed = derive_seeds(seed, 2)
    try:
        spec = coh.EligibilitySpec.from_dict(cfg.get("eligibility", {}))
        if "timelines" in cfg:
            timelines = coh.read_timelines(cfg["timelines"])
        else:
            timelines = coh.generate_claims(coh.ClaimsParams.from_dict(cfg.get("generator", {})), gen_seed)
        sampling = cfg.get("sampling", {})
        _check_keys(sampling, {"enabled", "max_ratio"}, "cohort.sampling")
    except (coh.CohortError, TypeError) as exc:
        raise ConfigError(str(exc))
    except FileNotFoundError as exc:
        raise ConfigError(f"timelines file not found: {exc.filename}")
    result = coh.run_pipeline(
        timelines, spec, cfg.get("prevalence_min", 0.05), cfg.get("variance_min", 0.2), sample_seed,
        sampling.get("enabled", True), sampling.get("max_ratio", 1.5),
    )
    if out is not None:
        out = Path(out)
        if "timelines" not in cfg:
            coh.write_timelines(out / "timelines.ndjson", timelines)
        write_dataset(result.matrix.to_dataset(), out / "cohort.csv")
        # insertion order keeps the exclusion tally in criterion order
        _write_json(out / "funnel.json", result.summary(), sort_keys=False)
    return result


def load_data(cfg, seed):
    """Build the dataset described by a ``data`` block."""
    if not isinstance(cfg, dict) or len(cfg) == 0:
        raise ConfigError("data: expected one of 'generator', 'dataset', 'cohort'")
    sources = {"generator", "dataset", "cohort"} & set(cfg)
    if len(sources) != 1:
        raise ConfigError("data: give exactly one of 'generator', 'dataset', 'cohort'")
    if "generator" in cfg:
        _check_keys(cfg, {"generator", "params"}, "data")
        if not isinstance(cfg["generator"], str):
            raise ConfigError("data.generator: expected a generator name; claims data goes under 'cohort'")
        params = dict(cfg.get("params", {}))
        params.setdefault("seed", seed)
        try:
            return synthetic.generate(cfg["generator"], **params)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"data.generator: {exc}")
    if "dataset" in cfg:
        _check_keys(cfg, {"dataset"}, "data")
        try:
            return read_dataset(cfg["dataset"])
        except FileNotFoundError:
            raise ConfigError(f"dataset file not found: {cfg['dataset']}")
    _check_keys(cfg, {"cohort"}, "data")
    return _cohort_pipeline(cfg["cohort"], seed).matrix.to_dataset()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(cfg, seed, out, workers=1) -> int:
    _check_keys(cfg, {"generator", "params", "name", "cohort", "seed"}, "generate")
    if "cohort" in cfg:
        if set(cfg) - {"cohort", "seed"}:
            raise ConfigError("generate: 'cohort' cannot be combined with other keys")
        res = _cohort_pipeline(cfg["cohort"], seed, out)
        _log(f"cohort: {res.n_input} patients -> {res.matrix.n} rows, {len(res.matrix.feature_names)} features")
        return 0
    if "generator" not in cfg:
        raise ConfigError("generate: needs 'generator' or 'cohort'")
    ds = load_data({"generator": cfg["generator"], "params": cfg.get("params", {})}, seed)
    name = cfg.get("name", cfg["generator"])
    provenance = {**ds.metadata, "master_seed": seed}
    write_dataset(ds, Path(out) / f"{name}.csv", provenance)
    _log(f"generate: wrote {ds.n} rows to {Path(out) / (name + '.csv')}")
    return 0


def cmd_cohort(cfg, seed, out, workers=1) -> int:
    res = _cohort_pipeline(cfg, seed, out)
    sp = res.split(seed=derive_seeds(seed, 3)[2])
    _write_json(Path(out) / "split.json", {
        "sizes": list(sp.sizes),
        "train": sp.train.tolist(),
        "validation": sp.validation.tolist(),
        "test": sp.test.tolist(),
    })
    _log(f"cohort: {res.n_input} patients -> {res.matrix.n} rows; split {sp.sizes}")
    return 0


RUN_KEYS = {"data", "estimators", "metrics", "split", "propensity_models", "seed"}


def _parse_grid(cfg):
    grid = cfg.get("estimators")
    if not isinstance(grid, list) or not grid:
        raise ConfigError("benchmark: 'estimators' must be a non-empty list")
    try:
        return [EstimatorConfig.from_dict(e) for e in grid]
    except (EstimatorConfigError, LearnerError, ValueError) as exc:
        raise ConfigError(f"benchmark: {exc}")


def cmd_benchmark(cfg, seed, out, workers=1) -> int:
    _check_keys(cfg, RUN_KEYS, "benchmark")
    grid = _parse_grid(cfg)
    metrics = tuple(cfg.get("metrics", METRICS))
    if not set(metrics) <= set(METRICS):
        raise ConfigError(f"benchmark: metrics must be a subset of {list(METRICS)}, got {list(metrics)}")
    s_data, s_split, s_ctx, s_prop, *s_est = derive_seeds(seed, 4 + len(grid))
    ds = load_data(cfg.get("data"), s_data)
    if "pehe" in metrics and ds.truth is None:
        raise ConfigError("benchmark: metric 'pehe' requires ground truth, which this dataset lacks")
    sp = split(ds, tuple(cfg.get("split", (6, 2, 2))), s_split)
    train, test = ds.subset(sp.train), ds.subset(sp.test)
    if not (0 < train.t.sum() < train.n and 0 < test.t.sum() < test.n):
        raise ConfigError("benchmark: train and test sets both need treated and control units")
    context = build_if_pehe_context(test, s_ctx) if "if_pehe" in metrics else None
    out = Path(out)

    def run(k):
        est = grid[k]
        t0 = time.perf_counter()
        try:
            rep, _ = evaluate(est, train, test, context, s_est[k], metrics)
            status = "ok"
        except Exception as exc:  # recorded per row; the run continues
            rep = EvaluationReport(est.id, est.base_learners, test.n, error=f"{type(exc).__name__}: {exc}")
            status = "failed"
        _log(f"[{k + 1}/{len(grid)}] {est.id}: {status} in {time.perf_counter() - t0:.1f}s")
        return rep

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(run, range(len(grid))))
    atomic_write_text(out / "report.csv", report_csv(sort_reports(reports)))

    if cfg.get("propensity_models"):
        rows = ["model,auroc_train_oof,auroc_test"]
        for spec in cfg["propensity_models"]:
            try:
                ls = LearnerSpec.from_dict(spec)
            except LearnerError as exc:
                raise ConfigError(f"benchmark.propensity_models: {exc}")
            scores = estimate_propensity(train, ls, seed=s_prop)
            m = fit_classifier(ls.with_seed(s_prop), train.X, train.t)
            rows.append(f"{ls.describe()},{auroc(scores, train.t)!r},{auroc(m.predict(test.X), test.t)!r}")
        atomic_write_text(out / "table4.csv", "\n".join(rows) + "\n")

    _write_json(out / "run.json", {
        "seed": seed,
        "split_sizes": list(sp.sizes),
        "metrics": list(metrics),
        "estimators": [e.to_dict() for e in grid],
        "if_pehe_context": None if context is None else {
            "fingerprint": context.fingerprint,
            "convention": context.convention,
            "degenerate_propensity": context.degenerate_propensity,
        },
    })
    n_ok = sum(1 for r in reports if not r.error)
    _log(f"benchmark: {n_ok}/{len(reports)} estimators succeeded")
    return 0 if n_ok else 1


def cmd_importance(cfg, seed, out, workers=1) -> int:
    _check_keys(cfg, {"data", "estimator", "method", "repeats", "instances", "seed"}, "importance")
    if "estimator" not in cfg:
        raise ConfigError("importance: needs an 'estimator'")
    try:
        est = EstimatorConfig.from_dict(cfg["estimator"])
    except (EstimatorConfigError, LearnerError, ValueError) as exc:
        raise ConfigError(f"importance: {exc}")
    method = cfg.get("method", "permutation")
    if method not in ("permutation", "exact-shapley"):
        raise ConfigError(f"importance: method must be 'permutation' or 'exact-shapley', got {method!r}")
    s_data, s_fit, s_imp = derive_seeds(seed, 3)
    ds = load_data(cfg.get("data"), s_data)
    if method == "exact-shapley" and ds.d > 12:
        raise ConfigError(f"importance: exact-shapley supports d <= 12 (got {ds.d}); use 'permutation'")
    model = fit_estimator(est, ds, s_fit)
    out = Path(out)
    if method == "permutation":
        rep = permutation_importance(model, ds, int(cfg.get("repeats", 5)), s_imp)
    else:
        inst = cfg.get("instances", 50)
        ids = np.arange(min(int(inst), ds.n)) if isinstance(inst, int) else np.asarray(inst, dtype=int)
        rep = shapley_report(model, ds, ids)
        atomic_write_text(out / "attributions.csv", rep.attributions_csv())
    atomic_write_text(out / "importance.csv", rep.importance_csv())
    _log(f"importance: {method} over {ds.d} features for {est.id}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "cohort": cmd_cohort,
    "benchmark": cmd_benchmark,
    "importance": cmd_importance,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="htekit", description="Heterogeneous treatment effect toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--workers", type=int, default=1, help="concurrent estimator fits")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if seed < 0 or seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return COMMANDS[args.command](cfg, seed, args.out, args.workers)
    except (ConfigError, MissingGroundTruthError) as exc:
        _log(f"error: {exc}")
        return 2
    except (coh.CohortError, ImportanceError, LearnerError, ValueError, OSError) as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
