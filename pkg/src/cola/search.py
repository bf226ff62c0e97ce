"""Monte Carlo tree search over layer-composition states.

Each simulation walks from the root choosing children by a UCB score with a
length penalty, expands one untried action when it reaches a node that still
has some (always at a node without children, otherwise with probability
``epsilon``), evaluates the new node's default completion, and backs the reward
up the trajectory.

Subtrees with nothing left to try (visited terminals, and nodes whose children
are all in that state) are marked exhausted and skipped during selection, so the
budget is not spent re-simulating memoized paths.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable, Sequence

from cola.executors.base import (
    RECOVERABLE_ERRORS,
    EvaluationOutcome,
    Evaluator,
    TaskInstance,
    failed_outcome,
)
from cola.paths import (
    MAX_BLOCK,
    MAX_EXTRA_COPIES,
    Action,
    ActionKind,
    LayerPath,
    PathState,
    SpaceMode,
    StackSpec,
    apply_action,
    encode_path,
    initial_state,
    legal_actions,
    materialize,
    materialized_length,
)


@dataclass(frozen=True)
class SearchConfig:
    simulations: int = 200
    c: float = math.sqrt(2.0)
    length_penalty: float = 5.0
    epsilon: float = 0.1
    rho: float = 0.0
    mode: SpaceMode = SpaceMode.JOINT
    l_max: int = 0  # 0 -> 2N
    seed: int = 0

    def __post_init__(self) -> None:
        if self.simulations < 1:
            raise ValueError("simulations must be >= 1")
        if self.c < 0 or self.length_penalty < 0:
            raise ValueError("c and length_penalty must be non-negative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        object.__setattr__(self, "mode", SpaceMode(self.mode))

    def stack(self, num_layers: int) -> StackSpec:
        return StackSpec(num_layers, self.l_max)

    def to_json(self) -> dict:
        return {"simulations": self.simulations, "c": self.c, "lambda": self.length_penalty,
                "epsilon": self.epsilon, "rho": self.rho, "mode": self.mode.value,
                "l_max": self.l_max, "seed": self.seed}


class SearchNode:
    __slots__ = ("state", "path_len", "q_total", "visits", "children", "untried", "exhausted")

    def __init__(self, state: PathState, spec: StackSpec, mode: SpaceMode) -> None:
        self.state = state
        self.path_len = materialized_length(state, spec)
        self.q_total = 0.0
        self.visits = 0
        self.children: dict[Action, SearchNode] = {}
        self.untried: list[Action] = legal_actions(state, spec, mode)
        self.exhausted = False

    def __repr__(self) -> str:
        return (f"SearchNode(cursor={self.state.cursor}, len={self.path_len}, "
                f"q={self.q_total:.3g}, v={self.visits}, children={len(self.children)})")


@dataclass(frozen=True)
class Candidate:
    path: LayerPath
    outcome: EvaluationOutcome

    @property
    def key(self) -> str:
        return encode_path(self.path)

    def to_json(self) -> dict:
        return {"path": self.key, **self.outcome.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> Candidate:
        layers = [int(t) for t in obj["path"].split(",")]
        return cls(LayerPath(layers), EvaluationOutcome.from_json(obj))


@dataclass
class SearchResult:
    instance_id: str
    mode: str
    num_layers: int
    original_outcome: EvaluationOutcome
    candidates: list[Candidate]
    reported: Candidate
    pareto: list[Candidate]
    simulations_run: int
    failures: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        cands = sorted(self.candidates, key=lambda c: (c.outcome.depth, c.key))
        return {
            "instance_id": self.instance_id,
            "mode": self.mode,
            "num_layers": self.num_layers,
            "original": self.original_outcome.to_json(),
            "candidates": [c.to_json() for c in cands],
            "reported": self.reported.to_json(),
            "pareto": [c.to_json() for c in self.pareto],
            "simulations_run": self.simulations_run,
            "failures": self.failures,
        }

    def dumps(self) -> str:
        return canonical_json(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> SearchResult:
        return cls(
            instance_id=obj["instance_id"],
            mode=obj["mode"],
            num_layers=int(obj["num_layers"]),
            original_outcome=EvaluationOutcome.from_json(obj["original"]),
            candidates=[Candidate.from_json(c) for c in obj["candidates"]],
            reported=Candidate.from_json(obj["reported"]),
            pareto=[Candidate.from_json(c) for c in obj["pareto"]],
            simulations_run=int(obj["simulations_run"]),
            failures=list(obj.get("failures", [])),
        )


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def search_rng(seed: int, instance_id: str) -> random.Random:
    """Independent stream per (seed, instance) so corpus runs can be sharded freely."""
    digest = hashlib.sha256(f"{seed}\x00{instance_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def ucb_score(q_total: float, visits: int, total_visits: int, path_len: int, num_layers: int,
              c: float, length_penalty: float) -> float:
    return (q_total / visits
            + c * math.sqrt(math.log(total_visits) / visits)
            - length_penalty * path_len / num_layers)


def best_child(node: SearchNode, total_visits: int, num_layers: int,
               config: SearchConfig) -> SearchNode | None:
    """Highest-UCB child that is not exhausted; ties go to the smaller action."""
    best, best_score = None, -math.inf
    for action in sorted(node.children, key=lambda a: a.sort_key):
        child = node.children[action]
        if child.exhausted:
            continue
        score = ucb_score(child.q_total, child.visits, total_visits, child.path_len,
                          num_layers, config.c, config.length_penalty)
        if score > best_score:
            best, best_score = child, score
    return best


def select(node: SearchNode, rng: random.Random, config: SearchConfig, total_visits: int,
           num_layers: int) -> SearchNode | None:
    """One descent step. ``None`` means "expand an untried action here".

    Must not be called on an exhausted node.
    """
    if node.untried:
        open_children = any(not c.exhausted for c in node.children.values())
        if not open_children or rng.random() < config.epsilon:
            return None
    return best_child(node, total_visits, num_layers, config)


def expand(node: SearchNode, rng: random.Random, spec: StackSpec, mode: SpaceMode) -> SearchNode:
    if not node.untried:
        raise ValueError("expand called on a node with no untried actions")
    action = node.untried.pop(rng.randrange(len(node.untried)))
    child = SearchNode(apply_action(node.state, action, spec, mode), spec, mode)
    node.children[action] = child
    return child


def backpropagate(trajectory: Sequence[SearchNode], reward: float) -> None:
    for node in trajectory:
        node.visits += 1
        node.q_total += reward
    for node in reversed(trajectory):
        if node.untried or any(not c.exhausted for c in node.children.values()):
            break
        node.exhausted = True


class _Simulator:
    """Evaluates node completions with per-path memoization for one search."""

    def __init__(self, evaluator: Evaluator, instance: TaskInstance, spec: StackSpec,
                 rho: float) -> None:
        self.evaluator = evaluator
        self.instance = instance
        self.spec = spec
        self.rho = rho
        self.memo: dict[tuple[int, ...], Candidate] = {}
        self.failures: list[dict] = []

    def __call__(self, node: SearchNode) -> tuple[float, Candidate]:
        path = materialize(node.state, self.spec)
        cand = self.memo.get(path.layers)
        if cand is None:
            try:
                outcome = self.evaluator.evaluate(self.instance, path, self.rho)
            except RECOVERABLE_ERRORS as exc:
                outcome = failed_outcome(path, str(exc))
                self.failures.append({"path": encode_path(path), "error": str(exc),
                                      "raw": getattr(exc, "raw", None)})
            cand = Candidate(path, outcome)
            self.memo[path.layers] = cand
        return cand.outcome.reward, cand


def simulate(node: SearchNode, evaluator: Evaluator, instance: TaskInstance,
             config: SearchConfig) -> tuple[float, Candidate]:
    """Stand-alone single evaluation of a node's default completion (no memo)."""
    spec = config.stack(evaluator.num_layers)
    return _Simulator(evaluator, instance, spec, config.rho)(node)


def pareto_front(candidates: Iterable[Candidate]) -> list[Candidate]:
    pool = list(candidates)

    def dominates(a: Candidate, b: Candidate) -> bool:
        ac, bc = a.outcome.correct, b.outcome.correct
        ad, bd = a.outcome.depth, b.outcome.depth
        return ac >= bc and ad <= bd and (ac > bc or ad < bd)

    front = [b for b in pool if not any(dominates(a, b) for a in pool if a is not b)]
    return sorted(front, key=lambda c: (c.outcome.depth, not c.outcome.correct, c.key))


def _preference(c: Candidate) -> tuple[int, int, str]:
    return (c.outcome.depth, c.outcome.non_recurrent_depth, c.key)


def select_reported(candidates: Sequence[Candidate], num_layers: int) -> Candidate:
    correct = [c for c in candidates if c.outcome.correct]
    if correct:
        return min(correct, key=_preference)
    identity = tuple(range(num_layers))
    for c in candidates:
        if c.path.layers == identity:
            return c
    raise ValueError("no correct candidate and the identity path was never evaluated")


def run_search(instance: TaskInstance, evaluator: Evaluator, config: SearchConfig) -> SearchResult:
    n = evaluator.num_layers
    spec = config.stack(n)
    rng = search_rng(config.seed, instance.id)
    sim = _Simulator(evaluator, instance, spec, config.rho)
    root = SearchNode(initial_state(spec), spec, config.mode)
    total_visits = 0
    for _ in range(config.simulations):
        node, trajectory = root, [root]
        while node.visits > 0 and not node.exhausted:
            step = select(node, rng, config, total_visits, n)
            node = expand(node, rng, spec, config.mode) if step is None else step
            trajectory.append(node)
        reward, _ = sim(node)
        backpropagate(trajectory, reward)
        total_visits += 1
    return _assemble(instance.id, config.mode.value, n, sim, config.simulations)


def _assemble(instance_id: str, mode: str, n: int, sim: _Simulator, runs: int) -> SearchResult:
    candidates = list(sim.memo.values())
    original = sim.memo[tuple(range(n))].outcome
    return SearchResult(instance_id, mode, n, original, candidates,
                        select_reported(candidates, n), pareto_front(candidates), runs,
                        sim.failures)


def evaluate_original(instance: TaskInstance, evaluator: Evaluator,
                      config: SearchConfig) -> SearchResult:
    """Identity path only: the fixed-architecture baseline."""
    n = evaluator.num_layers
    spec = config.stack(n)
    sim = _Simulator(evaluator, instance, spec, config.rho)
    sim(SearchNode(initial_state(spec), spec, SpaceMode.JOINT))
    return _assemble(instance.id, "original", n, sim, 0)


# ---------------------------------------------------------------------------
# Exhaustive oracle


class BudgetExhausted(RuntimeError):
    def __init__(self, evaluated: int) -> None:
        super().__init__(f"evaluation budget exhausted after {evaluated} paths")
        self.evaluated = evaluated


@lru_cache(maxsize=8)
def reachable_paths(num_layers: int, max_path_len: int,
                    mode: SpaceMode) -> dict[int, tuple[tuple[int, ...], ...]]:
    """Every complete path the grammar can build, grouped by depth and sorted
    within a group by (distinct layers, text encoding).

    Keep(k) and Skip(k) are equivalent to k unit steps and never violate the
    length cap, so unit Keep/Skip plus all Repeat(k, r) reach the same set.
    """
    spec = StackSpec(num_layers, max_path_len)
    found: set[tuple[int, ...]] = set()
    allow_skip = mode.allows(ActionKind.SKIP)
    allow_repeat = mode.allows(ActionKind.REPEAT)

    def walk(prefix: tuple[int, ...], cursor: int) -> None:
        if cursor == num_layers:
            if prefix:
                found.add(prefix)
            return
        remaining = num_layers - cursor
        base = len(prefix) + remaining  # default completion length
        walk(prefix + (cursor,), cursor + 1)
        if allow_skip and base - 1 > 0:
            walk(prefix, cursor + 1)
        if allow_repeat:
            for k in range(1, min(MAX_BLOCK, remaining) + 1):
                block = tuple(range(cursor, cursor + k))
                for r in range(1, MAX_EXTRA_COPIES + 1):
                    if base + r * k > spec.max_path_len:
                        break
                    walk(prefix + block * (r + 1), cursor + k)

    walk((), 0)
    groups: dict[int, list[tuple[int, ...]]] = {}
    for p in found:
        groups.setdefault(len(p), []).append(p)
    return {d: tuple(sorted(g, key=lambda p: (len(set(p)), encode_path(p))))
            for d, g in sorted(groups.items())}


def brute_force(instance: TaskInstance, evaluator: Evaluator, spec: StackSpec,
                mode: SpaceMode = SpaceMode.JOINT, rho: float = 0.0,
                max_evaluations: int | None = None) -> Candidate | None:
    """Minimum-depth correct path over the whole reachable set, or None if none is correct.

    Raises :class:`BudgetExhausted` if ``max_evaluations`` runs out first.
    Evaluators exposing ``correct_mask(instance, paths)`` are queried a depth group at a time.
    """
    batch = getattr(evaluator, "correct_mask", None)
    evaluated = 0
    for depth, group in reachable_paths(spec.num_layers, spec.max_path_len, mode).items():
        truncated = False
        if max_evaluations is not None and evaluated + len(group) > max_evaluations:
            group, truncated = group[: max_evaluations - evaluated], True
        if batch is not None:
            mask = batch(instance, group)
            hit = next((i for i, ok in enumerate(mask) if ok), None)
        else:
            hit = next((i for i, p in enumerate(group)
                        if evaluator.evaluate(instance, LayerPath(p), rho).correct), None)
        if hit is not None:
            path = LayerPath(group[hit])
            return Candidate(path, evaluator.evaluate(instance, path, rho))
        evaluated += len(group)
        if truncated:
            raise BudgetExhausted(evaluated)
    return None
