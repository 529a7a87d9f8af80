import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from htekit.cli import main

GOLDEN = Path(__file__).parent / "golden"


def _cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _run(tmp_path, cmd, obj, out="out", *extra):
    return main([cmd, "--config", _cfg(tmp_path, obj), "--out", str(tmp_path / out), *extra])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_report_matches_golden_schema(tmp_path):
    grid = json.loads((GOLDEN / "grid8.json").read_text())
    assert _run(tmp_path, "benchmark", grid) == 0
    text = (tmp_path / "out" / "report.csv").read_text().splitlines()
    golden = (GOLDEN / "report_schema.txt").read_text().splitlines()
    assert text[0] == golden[0]
    assert sorted(",".join(line.split(",")[:2]) for line in text[1:]) == golden[1:]
    rows = _rows(tmp_path / "out" / "report.csv")
    for r in rows:
        for k in ("ermse", "if_pehe", "pehe", "sqrt_pehe"):
            assert math.isfinite(float(r[k]))
    ifp = [float(r["if_pehe"]) for r in rows]
    assert ifp == sorted(ifp)
    run = json.loads((tmp_path / "out" / "run.json").read_text())
    assert run["if_pehe_context"]["convention"].startswith("A=W-pi")


def test_benchmark_is_deterministic_across_runs_and_workers(tmp_path):
    grid = json.loads((GOLDEN / "grid8.json").read_text())
    assert _run(tmp_path, "benchmark", grid, "a") == 0
    assert _run(tmp_path, "benchmark", grid, "b", "--workers", "3") == 0
    a = (tmp_path / "a" / "report.csv").read_bytes()
    assert a == (tmp_path / "b" / "report.csv").read_bytes()


def test_generate_linear(tmp_path):
    assert _run(tmp_path, "generate", {"generator": "linear", "params": {"n": 1000}}) == 0
    rows = _rows(tmp_path / "out" / "linear.csv")
    assert len(rows) == 1000 and {"y0", "y1"} <= set(rows[0])
    assert (tmp_path / "out" / "linear.json").exists()


def test_generate_cohort(tmp_path):
    cfg = {"cohort": {"generator": {"n_patients": 400}}}
    assert _run(tmp_path, "generate", cfg) == 0
    out = tmp_path / "out"
    assert (out / "timelines.ndjson").read_text().count("\n") == 400
    funnel = json.loads((out / "funnel.json").read_text())
    assert list(funnel["exclusions"])[:2] == ["born-before-cutoff", "no-prior-outcome"]
    assert len(_rows(out / "cohort.csv")) == funnel["n_final"]


def test_cohort_command_writes_split(tmp_path):
    assert _run(tmp_path, "cohort", {"generator": {"n_patients": 400}}) == 0
    sp = json.loads((tmp_path / "out" / "split.json").read_text())
    assert sum(sp["sizes"]) == len(sp["train"]) + len(sp["validation"]) + len(sp["test"])


def test_invalid_key_exits_2_naming_it(tmp_path, capsys):
    assert _run(tmp_path, "generate", {"generator": "linear", "paramz": {}}) == 2
    assert "paramz" in capsys.readouterr().err


def test_pehe_without_truth_exits_2(tmp_path, capsys):
    assert _run(tmp_path, "generate", {"generator": "linear", "params": {"n": 200}}) == 0
    src = _rows(tmp_path / "out" / "linear.csv")
    bare = tmp_path / "bare.csv"
    keep = [k for k in src[0] if k not in ("y0", "y1", "propensity")]
    with open(bare, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keep, extrasaction="ignore", lineterminator="\n")
        wr.writeheader()
        wr.writerows(src)
    cfg = {"data": {"dataset": str(bare)}, "estimators": [{"family": "t"}], "metrics": ["pehe"]}
    assert _run(tmp_path, "benchmark", cfg, "b") == 2
    assert "ground truth" in capsys.readouterr().err


def test_all_estimators_failing_exits_1(tmp_path):
    cfg = {"data": {"generator": "linear", "params": {"n": 100}},
           "estimators": [{"family": "t", "outcome_spec": {"kind": "forest", "min_samples_leaf": 80}}]}
    assert _run(tmp_path, "benchmark", cfg) == 1
    row = _rows(tmp_path / "out" / "report.csv")[0]
    assert row["error"] and row["if_pehe"] == ""


def test_partial_failure_still_succeeds(tmp_path):
    cfg = {"data": {"generator": "linear", "params": {"n": 200}},
           "estimators": [{"family": "t"}, {"family": "t", "outcome_spec": {"kind": "forest", "min_samples_leaf": 150}}]}
    assert _run(tmp_path, "benchmark", cfg) == 0
    rows = _rows(tmp_path / "out" / "report.csv")
    assert rows[0]["error"] == "" and rows[1]["error"] != ""


def test_propensity_model_comparison(tmp_path):
    cfg = {"data": {"generator": "linear", "params": {"n": 400}}, "estimators": [{"family": "naive"}],
           "propensity_models": ["logistic", {"kind": "forest", "n_trees": 10}]}
    assert _run(tmp_path, "benchmark", cfg) == 0
    rows = _rows(tmp_path / "out" / "table4.csv")
    assert [r["model"] for r in rows] == ["logistic", "forest(n_trees=10)"]
    assert all(0 <= float(r["auroc_test"]) <= 1 for r in rows)


def test_importance_outputs(tmp_path):
    cfg = {"data": {"generator": "heterogeneous", "params": {"n": 300}}, "estimator": {"family": "t"},
           "method": "exact-shapley", "instances": 5}
    assert _run(tmp_path, "importance", cfg) == 0
    assert _rows(tmp_path / "out" / "importance.csv")[0]["rank"] == "1"
    assert len(_rows(tmp_path / "out" / "attributions.csv")) == 5 * 6


def test_bad_usage_and_missing_config(tmp_path):
    assert main(["benchmark"]) == 2
    assert main(["benchmark", "--config", str(tmp_path / "nope.json")]) == 2


def test_console_entry_point(tmp_path):
    cfg = _cfg(tmp_path, {"generator": "linear", "params": {"n": 50}})
    res = subprocess.run([sys.executable, "-m", "htekit.cli", "generate", "--config", cfg, "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "linear.csv").exists()
