"""Dataset generation, corpus-wide search, the exhaustive oracle and report writing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from cola import __version__
from cola.analytics import PathRecord, corpus_report, engagement, engagement_csv, tradeoff_points
from cola.config import ExperimentConfig
from cola.executors import (
    ExternalEvaluator,
    SynthMachine,
    TaskInstance,
    ToyTransformer,
    connect,
    synth_generate,
    toy_generate,
)
from cola.paths import LayerPath, SpaceMode, StackSpec, decode_path, encode_path
from cola.search import (
    BudgetExhausted,
    SearchResult,
    brute_force,
    canonical_json,
    evaluate_original,
    run_search,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "COLA_WORKERS"


class HarnessError(Exception):
    exit_code = 1


class ConfigError(HarnessError):
    exit_code = 2


class BackendError(HarnessError):
    exit_code = 3


# ---------------------------------------------------------------------------
# Dataset files


def sidecar_paths(dataset: Path) -> tuple[Path, Path]:
    """(backend description, hidden generating paths) stored next to a dataset."""
    stem = dataset.with_suffix("")
    return stem.with_name(stem.name + ".backend.json"), stem.with_name(stem.name + ".hidden.jsonl")


def _write_jsonl(path: Path, rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(canonical_json(row) + "\n")
    except OSError as exc:
        raise HarnessError(f"cannot write {path}: {exc}") from exc


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise HarnessError(f"cannot write {path}: {exc}") from exc


def _pretty(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def generate_dataset(config: ExperimentConfig) -> Path:
    """Write ``<out>/dataset.jsonl`` plus the backend description and hidden-path sidecar."""
    out = Path(config.out)
    dataset = Path(config.dataset) if config.dataset else out / "dataset.jsonl"
    backend_file, hidden_file = sidecar_paths(dataset)
    if config.backend == "synth":
        p = config.synth
        machine, instances = synth_generate(config.seed, p.num_layers, p.state_dim, p.modulus,
                                            p.count, max_path_len=config.search.l_max,
                                            passthrough=p.passthrough)
        description = machine.to_json()
        hidden = [{"id": inst.id, "hidden_path": encode_path(machine.hidden_paths[inst.id])}
                  for inst in instances]
    elif config.backend == "toy":
        p = config.toy
        model_seed, data_seed = np.random.SeedSequence(config.seed).generate_state(2)
        model = ToyTransformer(int(model_seed), p.num_layers, p.model_dim, p.vocab_size)
        instances = toy_generate(model, p.count, p.seq_len, int(data_seed), p.regime,
                                 p.perturbation)
        description = model.to_json()
        identity = encode_path(LayerPath.identity(p.num_layers))
        hidden = [{"id": inst.id, "hidden_path": identity,
                   "labeller": "full-model" if p.regime == "self" else "perturbed-model"}
                  for inst in instances]
    else:
        raise ConfigError("generate needs the synth or toy backend")
    _write_jsonl(dataset, (inst.to_json() for inst in instances))
    _write_text(backend_file, _pretty(description))
    _write_jsonl(hidden_file, hidden)
    log.info("wrote %d instances to %s", len(instances), dataset)
    return dataset


def load_dataset(path: Path) -> tuple[list[TaskInstance], str]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    instances, seen = [], set()
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            inst = TaskInstance.from_json(json.loads(line))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad instance record: {exc}") from exc
        if inst.id in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate instance id {inst.id!r}")
        seen.add(inst.id)
        instances.append(inst)
    if not instances:
        raise ConfigError(f"{path} holds no instances")
    return instances, hashlib.sha256(raw).hexdigest()


def sample_instances(instances: list[TaskInstance], k: int, seed: int) -> list[TaskInstance]:
    if k >= len(instances):
        if k > len(instances):
            log.warning("sample_size %d exceeds dataset size %d; using all instances",
                        k, len(instances))
        return list(instances)
    picked = sorted(random.Random(seed).sample(range(len(instances)), k))
    return [instances[i] for i in picked]


# ---------------------------------------------------------------------------
# Backends


def backend_description(config: ExperimentConfig, dataset: Path) -> dict:
    if config.backend == "external":
        return {"kind": "external", "server": config.server,
                "num_layers": config.external.num_layers, "timeout": config.external.timeout}
    backend_file, _ = sidecar_paths(dataset)
    try:
        desc = json.loads(backend_file.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load backend description {backend_file}: {exc}") from exc
    if desc.get("kind") != config.backend:
        raise ConfigError(f"{backend_file} describes a {desc.get('kind')!r} backend, "
                          f"config asks for {config.backend!r}")
    return desc


def build_evaluator(desc: dict):
    kind = desc["kind"]
    if kind == "synth":
        return SynthMachine.from_json(desc)
    if kind == "toy":
        return ToyTransformer.from_json(desc)
    if kind == "external":
        return ExternalEvaluator(connect(desc["server"], desc["timeout"]), desc["num_layers"])
    raise ConfigError(f"unknown backend kind {kind!r}")


def probe_backend(desc: dict) -> None:
    if desc["kind"] != "external":
        return
    try:
        evaluator = build_evaluator(desc)
    except OSError as exc:
        raise BackendError(str(exc)) from exc
    evaluator.close()


_worker_evaluator = None


def _init_worker(desc: dict) -> None:
    global _worker_evaluator
    _worker_evaluator = build_evaluator(desc)


def _run_task(task: tuple[TaskInstance, str, ExperimentConfig]) -> tuple[str, str, str | None, str | None]:
    instance, mode, config = task
    cfg = config.search_config(mode)
    try:
        if mode == "original":
            result = evaluate_original(instance, _worker_evaluator, cfg)
        else:
            result = run_search(instance, _worker_evaluator, cfg)
    except Exception as exc:  # noqa: BLE001 - recorded per instance, run continues
        return instance.id, mode, None, f"{type(exc).__name__}: {exc}"
    return instance.id, mode, result.dumps(), None


def worker_count(config: ExperimentConfig) -> int:
    if config.workers:
        return config.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _iter_results(tasks, desc: dict, workers: int) -> Iterator[tuple[str, str, str | None, str | None]]:
    if workers <= 1:
        _init_worker(desc)
        try:
            for task in tasks:
                yield _run_task(task)
        finally:
            close = getattr(_worker_evaluator, "close", None)
            if close:
                close()
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(desc,)) as pool:
        yield from pool.map(_run_task, tasks, chunksize=1)


# ---------------------------------------------------------------------------
# Search runs


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def result_filename(instance_id: str) -> str:
    safe = _UNSAFE.sub("_", instance_id).lstrip(".")
    if safe != instance_id:
        safe = f"{safe or 'id'}-{hashlib.sha1(instance_id.encode()).hexdigest()[:8]}"
    return safe + ".json"


def _dataset_path(config: ExperimentConfig) -> Path:
    if not config.dataset:
        raise ConfigError("no dataset given (use --dataset or the 'dataset' config field)")
    return Path(config.dataset)


@dataclass
class RunSummary:
    manifest_path: Path
    completed: int
    failed_instances: int
    evaluator_failures: int

    @property
    def exit_code(self) -> int:
        return 4 if self.failed_instances or self.evaluator_failures else 0


def run_experiment(config: ExperimentConfig) -> RunSummary:
    started = time.time()
    dataset = _dataset_path(config)
    instances, digest = load_dataset(dataset)
    desc = backend_description(config, dataset)
    num_layers = desc["num_layers"] if desc["kind"] != "synth" else len(desc["matrices"])
    if num_layers != config.num_layers:
        raise ConfigError(f"backend has {num_layers} layers, config says {config.num_layers}")
    probe_backend(desc)

    chosen = sample_instances(instances, config.sample_size, config.seed)
    out = Path(config.out)
    tasks = [(inst, mode, config) for inst in chosen for mode in config.modes]
    index: dict[str, dict[str, str]] = {m: {} for m in config.modes}
    errors: dict[str, dict[str, str]] = {}
    evaluator_failures: dict[str, dict[str, int]] = {}
    for inst_id, mode, payload, error in _iter_results(tasks, desc, worker_count(config)):
        if error is not None:
            log.error("instance %s (%s) failed: %s", inst_id, mode, error)
            errors.setdefault(mode, {})[inst_id] = error
            continue
        rel = Path("results") / mode / result_filename(inst_id)
        _write_text(out / rel, payload + "\n")
        index[mode][inst_id] = rel.as_posix()
        n_fail = len(json.loads(payload)["failures"])
        if n_fail:
            evaluator_failures.setdefault(mode, {})[inst_id] = n_fail
    manifest = {
        "version": __version__,
        "config": config.snapshot(),
        "dataset": {"path": str(dataset), "sha256": digest, "count": len(instances),
                    "name": config.dataset_name or dataset.stem},
        "num_layers": num_layers,
        "sampled": [inst.id for inst in chosen],
        "results": index,
        "instance_errors": errors,
        "evaluator_failures": evaluator_failures,
        "timing": {"started": started, "finished": time.time(),
                   "seconds": round(time.time() - started, 3)},
    }
    manifest_path = out / "manifest.json"
    _write_text(manifest_path, _pretty(manifest))
    return RunSummary(manifest_path, sum(len(v) for v in index.values()),
                      sum(len(v) for v in errors.values()),
                      sum(sum(v.values()) for v in evaluator_failures.values()))


# ---------------------------------------------------------------------------
# Exhaustive oracle


def bruteforce_run(config: ExperimentConfig) -> dict[str, Path]:
    dataset = _dataset_path(config)
    instances, _ = load_dataset(dataset)
    desc = backend_description(config, dataset)
    if config.num_layers > config.oracle.max_layers:
        raise ConfigError(f"{config.num_layers} layers exceeds the oracle bound "
                          f"{config.oracle.max_layers}")
    probe_backend(desc)
    evaluator = build_evaluator(desc)
    chosen = sample_instances(instances, config.sample_size, config.seed)
    spec = StackSpec(config.num_layers, config.search.l_max)
    written = {}
    try:
        for mode in config.modes:
            space = SpaceMode.JOINT if mode == "original" else SpaceMode(mode)
            rows = []
            for inst in chosen:
                row = {"id": inst.id, "mode": mode}
                try:
                    best = brute_force(inst, evaluator, spec, space, config.search.rho,
                                       config.oracle.budget)
                except BudgetExhausted as exc:
                    row.update(status="budget_exhausted", evaluated=exc.evaluated)
                else:
                    if best is None:
                        row["status"] = "absent"
                    else:
                        row.update(status="found", path=best.key, depth=best.outcome.depth,
                                   non_recurrent_depth=best.outcome.non_recurrent_depth)
                rows.append(row)
            path = Path(config.out) / f"oracle_{mode}.jsonl"
            _write_jsonl(path, rows)
            written[mode] = path
    finally:
        close = getattr(evaluator, "close", None)
        if close:
            close()
    return written


def load_oracle(path: Path) -> dict[str, dict]:
    rows = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        rows[row["id"]] = row
    return rows


# ---------------------------------------------------------------------------
# Analysis


class _OutcomeModel(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)
    correct: bool
    reward: float
    depth: int
    non_recurrent_depth: int
    answer: str | None = None
    error: str | None = None


class _CandidateModel(_OutcomeModel):
    path: str

    @field_validator("path")
    @classmethod
    def _digits(cls, v: str) -> str:
        if not re.fullmatch(r"\d+(,\d+)*", v):
            raise ValueError(f"bad path text {v!r}")
        return v


class _FailureModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    path: str
    error: str
    raw: str | None = None


class ResultSchema(BaseModel):
    """Schema of a persisted search result."""

    model_config = ConfigDict(extra="forbid", strict=True)
    instance_id: str
    mode: str
    num_layers: int
    original: _OutcomeModel
    candidates: list[_CandidateModel]
    reported: _CandidateModel
    pareto: list[_CandidateModel]
    simulations_run: int
    failures: list[_FailureModel]


def load_result(path: Path) -> SearchResult:
    """Parse and re-validate one result file; raises ValueError on any inconsistency."""
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        ResultSchema.model_validate(obj)
    except (OSError, ValueError, ValidationError) as exc:
        raise ValueError(f"{path}: {exc}") from exc
    result = SearchResult.from_json(obj)
    n = result.num_layers
    for cand in [result.reported, *result.candidates, *result.pareto]:
        decode_path(cand.key, n)
        if (cand.outcome.depth, cand.outcome.non_recurrent_depth) != (
                len(cand.path), cand.path.non_recurrent_depth):
            raise ValueError(f"{path}: depth fields disagree with path {cand.key}")
    return result


def analyze_run(run_dir: str | Path) -> tuple[dict, Path]:
    run = Path(run_dir)
    try:
        manifest = json.loads((run / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read manifest in {run}: {exc}") from exc
    num_layers = int(manifest["num_layers"])
    name = manifest["dataset"]["name"]
    problems: list[dict] = []
    by_mode: dict[str, list[PathRecord]] = {}
    for mode, entries in sorted(manifest["results"].items()):
        recs = []
        for inst_id, rel in sorted(entries.items()):
            try:
                recs.append(PathRecord.from_result(load_result(run / rel)))
            except ValueError as exc:
                problems.append({"mode": mode, "id": inst_id, "file": rel, "error": str(exc)})
        by_mode[mode] = recs
    report = {
        "dataset": name,
        "num_layers": num_layers,
        "modes": {mode: corpus_report(recs, num_layers) for mode, recs in by_mode.items()},
        "tradeoff_points": tradeoff_points({m: r for m, r in by_mode.items() if r}),
        "excluded": len(problems),
        "errors": problems,
    }
    out = run / "report"
    _write_text(out / "report.json", _pretty(report))
    for metric in ("selection_frequency", "skip_rate", "mean_recurrence", "usage_share"):
        columns = {f"{name}:{mode}": engagement(recs, num_layers).__getattribute__(metric)
                   for mode, recs in by_mode.items() if recs}
        _write_text(out / f"{metric}.csv", engagement_csv(columns))
    return report, out


def combine_reports(run_dirs: list[str | Path], out_dir: str | Path) -> Path:
    """Merge analyzed runs into one set of layer x dataset matrices and a tradeoff table."""
    out = Path(out_dir)
    reports = []
    for run in run_dirs:
        path = Path(run) / "report" / "report.json"
        if not path.exists():
            analyze_run(run)
        reports.append(json.loads(path.read_text(encoding="utf-8")))
    for metric in ("selection_frequency", "skip_rate", "mean_recurrence", "usage_share"):
        columns = {}
        for rep in reports:
            for mode, body in rep["modes"].items():
                if body["engagement"]:
                    columns[f"{rep['dataset']}:{mode}"] = body["engagement"][metric]
        _write_text(out / f"{metric}.csv", engagement_csv(columns))
    rows = ["dataset,mode,mean_depth,accuracy,count"]
    for rep in reports:
        for mode, point in rep["tradeoff_points"].items():
            rows.append(f"{rep['dataset']},{mode},{point['mean_depth']!r},{point['accuracy']!r},"
                        f"{point['count']}")
    _write_text(out / "tradeoff.csv", "\n".join(rows) + "\n")
    return out
