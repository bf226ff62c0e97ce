"""Synthetic layer machine: each layer is an invertible affine map over (Z/mZ)^d.

Labels come from running a hidden, grammar-reachable path, so every generated
instance is solvable and correctness checks are exact integer comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cola.executors.base import ContractViolation, EvaluationOutcome, TaskInstance, make_outcome
from cola.paths import (
    ActionKind,
    LayerPath,
    SpaceMode,
    StackSpec,
    apply_action,
    initial_state,
    is_terminal,
    legal_actions,
    materialize,
)

# Relative odds of each action kind when sampling a hidden path.
HIDDEN_KIND_WEIGHTS = {ActionKind.KEEP: 0.5, ActionKind.SKIP: 0.3, ActionKind.REPEAT: 0.2}


def _is_prime(m: int) -> bool:
    return m >= 2 and all(m % p for p in range(2, int(m ** 0.5) + 1))


def rank_mod_p(matrix: np.ndarray, p: int) -> int:
    a = [[int(v) % p for v in row] for row in matrix]
    rows, cols = len(a), len(a[0]) if a else 0
    rank = 0
    for col in range(cols):
        pivot = next((r for r in range(rank, rows) if a[r][col]), None)
        if pivot is None:
            continue
        a[rank], a[pivot] = a[pivot], a[rank]
        inv = pow(a[rank][col], -1, p)
        a[rank] = [v * inv % p for v in a[rank]]
        for r in range(rows):
            if r != rank and a[r][col]:
                f = a[r][col]
                a[r] = [(v - f * w) % p for v, w in zip(a[r], a[rank])]
        rank += 1
    return rank


@dataclass(frozen=True, eq=False)
class SynthMachine:
    matrices: np.ndarray  # (N, d, d) int64
    offsets: np.ndarray  # (N, d) int64
    modulus: int
    # instance id -> path that produced its label; empty when rebuilt for search
    hidden_paths: dict[str, LayerPath] = field(default_factory=dict, compare=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SynthMachine):
            return NotImplemented
        return (self.modulus == other.modulus and np.array_equal(self.matrices, other.matrices)
                and np.array_equal(self.offsets, other.offsets))

    __hash__ = None  # type: ignore[assignment]

    @property
    def num_layers(self) -> int:
        return int(self.matrices.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.matrices.shape[1])

    def run(self, start, path: LayerPath) -> np.ndarray:
        x = np.asarray(start, dtype=np.int64)
        if x.shape != (self.state_dim,):
            raise ContractViolation(f"state vector has shape {x.shape}, machine expects "
                                    f"({self.state_dim},)")
        for i in path:
            if not 0 <= i < self.num_layers:
                raise ContractViolation(f"layer {i} outside [0, {self.num_layers})")
            x = (self.matrices[i] @ x + self.offsets[i]) % self.modulus
        return x

    def evaluate(self, instance: TaskInstance, path: LayerPath,
                 rho: float = 0.0) -> EvaluationOutcome:
        expected = np.asarray(instance.expected, dtype=np.int64)
        if expected.shape != (self.state_dim,):
            raise ContractViolation(f"instance {instance.id}: expected has shape "
                                    f"{expected.shape}, machine state is ({self.state_dim},)")
        final = self.run(instance.payload, path)
        return make_outcome(bool(np.array_equal(final, expected)), path, self.num_layers, rho,
                            answer=",".join(str(int(v)) for v in final))

    def correct_mask(self, instance: TaskInstance, paths) -> np.ndarray:
        """Correctness of many equal-length paths at once (used by the exhaustive oracle)."""
        if len(paths) == 0:
            return np.zeros(0, dtype=bool)
        idx = np.asarray(paths, dtype=np.int64)
        if idx.ndim != 2:
            raise ContractViolation("correct_mask needs paths of equal length")
        x = np.broadcast_to(np.asarray(instance.payload, dtype=np.int64),
                            (idx.shape[0], self.state_dim))
        for t in range(idx.shape[1]):
            layer = idx[:, t]
            x = (np.einsum("pij,pj->pi", self.matrices[layer], x) + self.offsets[layer]) % self.modulus
        return np.all(x == np.asarray(instance.expected, dtype=np.int64), axis=1)

    def to_json(self) -> dict:
        return {
            "kind": "synth",
            "modulus": self.modulus,
            "matrices": self.matrices.tolist(),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> SynthMachine:
        matrices = np.asarray(obj["matrices"], dtype=np.int64)
        offsets = np.asarray(obj["offsets"], dtype=np.int64)
        if matrices.ndim != 3 or matrices.shape[1] != matrices.shape[2]:
            raise ValueError(f"matrices must be (N, d, d), got {matrices.shape}")
        if offsets.shape != matrices.shape[:2]:
            raise ValueError(f"offsets must be (N, d), got {offsets.shape}")
        return cls(matrices, offsets, int(obj["modulus"]))


def sample_grammar_path(rng: np.random.Generator, spec: StackSpec,
                        mode: SpaceMode = SpaceMode.JOINT) -> LayerPath:
    """Random walk over the action grammar until every layer is consumed."""
    state = initial_state(spec)
    while not is_terminal(state, spec):
        actions = legal_actions(state, spec, mode)
        kinds = sorted({a.kind for a in actions})
        weights = np.array([HIDDEN_KIND_WEIGHTS[k] for k in kinds])
        kind = kinds[rng.choice(len(kinds), p=weights / weights.sum())]
        pool = [a for a in actions if a.kind is kind]
        state = apply_action(state, pool[rng.integers(len(pool))], spec, mode)
    return materialize(state, spec)


def synth_layers(rng: np.random.Generator, n: int, d: int, m: int,
                 passthrough: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random invertible affine layers; ``passthrough`` of them (never layer 0) are identities."""
    matrices = np.empty((n, d, d), dtype=np.int64)
    offsets = rng.integers(0, m, size=(n, d)).astype(np.int64)
    idle = set(rng.choice(np.arange(1, n), size=min(passthrough, n - 1), replace=False).tolist()) if n > 1 else set()
    for i in range(n):
        if i in idle:
            matrices[i] = np.eye(d, dtype=np.int64)
            offsets[i] = 0
            continue
        while True:
            a = rng.integers(0, m, size=(d, d))
            if rank_mod_p(a, m) == d:
                break
        matrices[i] = a
    return matrices, offsets


def synth_generate(seed: int, num_layers: int, state_dim: int, modulus: int, count: int, *,
                   max_path_len: int = 0,
                   hidden_path: LayerPath | None = None, passthrough: int = 0) -> tuple[SynthMachine, list[TaskInstance]]:
    """Build a seeded machine and ``count`` labelled instances.

    Each instance gets its own hidden path sampled from the joint grammar unless
    ``hidden_path`` fixes one for all of them.
    """
    if num_layers < 1 or state_dim < 1 or count < 1:
        raise ValueError("num_layers, state_dim and count must be positive")
    if not _is_prime(modulus):
        raise ValueError(f"modulus must be prime, got {modulus}")
    spec = StackSpec(num_layers, max_path_len)
    if hidden_path is not None:
        hidden_path.validate(spec)
    layer_rng, data_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(seed).spawn(2))
    matrices, offsets = synth_layers(layer_rng, num_layers, state_dim, modulus, passthrough)
    machine = SynthMachine(matrices, offsets, modulus)
    instances = []
    for j in range(count):
        path = hidden_path if hidden_path is not None else sample_grammar_path(data_rng, spec)
        x0 = data_rng.integers(0, modulus, size=state_dim)
        y = machine.run(x0, path)
        inst = TaskInstance(f"synth-{j:04d}", [int(v) for v in x0], [int(v) for v in y])
        machine.hidden_paths[inst.id] = path
        instances.append(inst)
    return machine, instances
