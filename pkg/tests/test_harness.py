import hashlib
import json
import logging
import sys
from pathlib import Path

import pytest

from cola.cli import main
from cola.config import ExperimentConfig, load_config
from cola.harness import load_result, result_filename

MOCK = f"{sys.executable} {Path(__file__).with_name('mock_server.py')}"


def run(*argv):
    return main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_bytes(root, exclude=("manifest.json",)):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in exclude}


def manifest_sans_timing(run_dir):
    m = json.loads((Path(run_dir) / "manifest.json").read_text())
    m.pop("timing")
    return m


@pytest.fixture
def synth_data(tmp_path):
    assert run("generate", "--backend", "synth", "--seed", 7, "--count", 50,
               "--out", tmp_path / "data") == 0
    return tmp_path / "data" / "dataset.jsonl"


def test_generate_is_deterministic(tmp_path, synth_data):
    assert run("generate", "--seed", 7, "--count", 50, "--out", tmp_path / "again") == 0
    assert sha(synth_data) == sha(tmp_path / "again" / "dataset.jsonl")
    lines = synth_data.read_text().splitlines()
    hidden = (synth_data.parent / "dataset.hidden.jsonl").read_text().splitlines()
    assert len(lines) == 50 and len(hidden) == 50
    assert all(set(json.loads(l)) == {"id", "payload", "expected"} for l in lines)


def test_toy_generation_is_self_labelled(tmp_path):
    from cola.executors import TaskInstance, ToyTransformer
    from cola.paths import LayerPath
    assert run("generate", "--backend", "toy", "--seed", 3, "--count", 20,
               "--out", tmp_path) == 0
    model = ToyTransformer.from_json(json.loads((tmp_path / "dataset.backend.json").read_text()))
    for line in (tmp_path / "dataset.jsonl").read_text().splitlines():
        inst = TaskInstance.from_json(json.loads(line))
        assert model.evaluate(inst, LayerPath.identity(model.num_layers)).correct


def test_search_writes_one_file_per_instance(tmp_path, synth_data):
    out = tmp_path / "run"
    assert run("search", "--dataset", synth_data, "--out", out, "--mode", "joint",
               "--simulations", 40, "--workers", 1) == 0
    files = list((out / "results" / "joint").glob("*.json"))
    assert len(files) == 50
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["dataset"]["sha256"] == sha(synth_data)
    assert len(manifest["results"]["joint"]) == 50
    assert len(set(manifest["sampled"])) == 50
    for f in files:
        load_result(f)


def test_runs_are_reproducible_across_worker_counts(tmp_path, synth_data):
    args = ["--dataset", synth_data, "--mode", "joint", "--mode", "skip",
            "--simulations", 30, "--sample-size", 20, "--seed", 4]
    assert run("search", *args, "--out", tmp_path / "a", "--workers", 1) == 0
    assert run("search", *args, "--out", tmp_path / "b", "--workers", 1) == 0
    assert run("search", *args, "--out", tmp_path / "c", "--workers", 3) == 0
    for d in "abc":
        assert run("analyze", tmp_path / d) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b") == tree_bytes(tmp_path / "c")
    ma, mb = manifest_sans_timing(tmp_path / "a"), manifest_sans_timing(tmp_path / "b")
    ma["config"]["out"] = mb["config"]["out"]
    assert ma == mb


def test_sampling_notice_and_without_replacement(tmp_path, synth_data, caplog):
    with caplog.at_level(logging.WARNING):
        assert run("search", "--dataset", synth_data, "--out", tmp_path / "r", "--mode",
                   "original", "--sample-size", 500) == 0
    assert "exceeds dataset size 50" in caplog.text
    assert run("search", "--dataset", synth_data, "--out", tmp_path / "s", "--mode",
               "original", "--sample-size", 17, "--seed", 2) == 0
    sampled = json.loads((tmp_path / "s" / "manifest.json").read_text())["sampled"]
    assert len(sampled) == len(set(sampled)) == 17
    order = [json.loads(l)["id"] for l in synth_data.read_text().splitlines()]
    assert sampled == [i for i in order if i in set(sampled)]


def test_original_only_tradeoff_point(tmp_path, synth_data):
    out = tmp_path / "orig"
    assert run("search", "--dataset", synth_data, "--out", out, "--mode", "original") == 0
    assert run("analyze", out) == 0
    report = json.loads((out / "report" / "report.json").read_text())
    point = report["tradeoff_points"]["original"]
    assert point["mean_depth"] == 8.0
    assert point["accuracy"] == report["modes"]["original"]["original_accuracy"]


def test_analyze_is_idempotent_and_counts_exclusions(tmp_path, synth_data):
    out = tmp_path / "run"
    assert run("search", "--dataset", synth_data, "--out", out, "--mode", "joint",
               "--simulations", 20, "--sample-size", 12) == 0
    assert run("analyze", out) == 0
    first = tree_bytes(out / "report", exclude=())
    assert run("analyze", out) == 0
    assert tree_bytes(out / "report", exclude=()) == first

    files = sorted((out / "results" / "joint").glob("*.json"))
    files[0].write_text("{ truncated")
    files[1].write_text(files[1].read_text().replace('"depth":', '"depth":"x",', 1))
    files[2].unlink()
    assert run("analyze", out) == 0
    report = json.loads((out / "report" / "report.json").read_text())
    assert report["excluded"] == 3
    assert len(report["errors"]) == 3
    assert report["modes"]["joint"]["count"] == 9


def test_schema_rejects_inconsistent_depth(tmp_path, synth_data):
    out = tmp_path / "run"
    assert run("search", "--dataset", synth_data, "--out", out, "--mode", "joint",
               "--simulations", 10, "--sample-size", 1) == 0
    f = next((out / "results" / "joint").glob("*.json"))
    obj = json.loads(f.read_text())
    obj["reported"]["depth"] += 1
    f.write_text(json.dumps(obj))
    with pytest.raises(ValueError, match="depth"):
        load_result(f)


def test_bruteforce_file(tmp_path, synth_data):
    out = tmp_path / "oracle"
    assert run("bruteforce", "--dataset", synth_data, "--out", out, "--mode", "joint",
               "--sample-size", 10) == 0
    rows = [json.loads(l) for l in (out / "oracle_joint.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    hidden = {json.loads(l)["id"]: json.loads(l)["hidden_path"] for l in
              (synth_data.parent / "dataset.hidden.jsonl").read_text().splitlines()}
    for row in rows:
        assert row["status"] == "found"
        assert row["depth"] <= len(hidden[row["id"]].split(","))


def test_bruteforce_budget_and_bound(tmp_path, synth_data):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"oracle": {"budget": 3}, "sample_size": 4}))
    assert run("bruteforce", "--config", cfg, "--dataset", synth_data, "--out", tmp_path) == 0
    rows = [json.loads(l) for l in (tmp_path / "oracle_joint.jsonl").read_text().splitlines()]
    assert {r["status"] for r in rows} <= {"found", "budget_exhausted"}
    assert any(r["status"] == "budget_exhausted" for r in rows)
    cfg.write_text(json.dumps({"oracle": {"max_layers": 4}}))
    assert run("bruteforce", "--config", cfg, "--dataset", synth_data, "--out", tmp_path) == 2


def test_report_merges_runs(tmp_path, synth_data):
    for name in ("one", "two"):
        assert run("search", "--dataset", synth_data, "--dataset-name", name, "--out",
                   tmp_path / name, "--mode", "original", "--sample-size", 5) == 0
    assert run("report", tmp_path / "one", tmp_path / "two", "--out", tmp_path / "merged") == 0
    header = (tmp_path / "merged" / "skip_rate.csv").read_text().splitlines()[0]
    assert header == "layer,one:original,two:original"
    assert (tmp_path / "merged" / "tradeoff.csv").read_text().count("\n") == 3


def test_config_errors_exit_2(tmp_path, synth_data):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"search": {"epsilon": 2}}))
    assert run("search", "--config", bad, "--dataset", synth_data) == 2
    bad.write_text("{not json")
    assert run("search", "--config", bad, "--dataset", synth_data) == 2
    bad.write_text(json.dumps({"unknown_field": 1}))
    assert run("search", "--config", bad, "--dataset", synth_data) == 2
    assert run("search", "--dataset", tmp_path / "missing.jsonl", "--out", tmp_path) == 2
    assert run("search", "--backend", "external") == 2  # no server given


def test_config_flags_override_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "search": {"simulations": 9, "lambda": 2.0}}))
    c = load_config(cfg, {"seed": 5, "search.simulations": 11})
    assert (c.seed, c.search.simulations, c.search.length_penalty) == (5, 11, 2.0)
    assert ExperimentConfig(modes=["joint", "original", "skip"]).modes == ["original", "skip", "joint"]


def test_schema_command(capsys):
    assert run("schema") == 0
    schema = json.loads(capsys.readouterr().out)
    assert "search" in schema["properties"]


def _external_dataset(tmp_path, ids):
    path = tmp_path / "ext.jsonl"
    path.write_text("".join(json.dumps({"id": i, "payload": {}, "expected": None}) + "\n"
                            for i in ids))
    cfg = tmp_path / "ext.json"
    cfg.write_text(json.dumps({"backend": "external", "external": {"num_layers": 4,
                                                                   "timeout": 5}}))
    return path, cfg


def test_unreachable_backend_exits_3(tmp_path):
    data, cfg = _external_dataset(tmp_path, ["a"])
    assert run("search", "--config", cfg, "--dataset", data, "--server", "127.0.0.1:1",
               "--out", tmp_path / "r") == 3
    assert not (tmp_path / "r" / "results").exists()


def test_external_faults_give_partial_exit(tmp_path):
    data, cfg = _external_dataset(tmp_path, ["fine", "q-badid", "q-badjson", "q-error"])
    out = tmp_path / "r"
    code = run("search", "--config", cfg, "--dataset", data, "--server", f"{MOCK} 4",
               "--out", out, "--simulations", 20, "--workers", 1)
    assert code == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["results"]["joint"]) == {"fine", "q-badid", "q-badjson", "q-error"}
    assert set(manifest["evaluator_failures"]["joint"]) == {"q-badid", "q-badjson", "q-error"}
    fine = load_result(out / manifest["results"]["joint"]["fine"])
    assert fine.reported.outcome.correct and fine.reported.outcome.depth < 4


def test_result_filenames_are_safe():
    assert result_filename("synth-0001") == "synth-0001.json"
    odd = result_filename("../x/y")
    assert "/" not in odd and not odd.startswith(".")
    assert result_filename("a/b") != result_filename("a_b")
