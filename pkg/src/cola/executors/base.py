"""Shared evaluation types: task instances, outcomes and the evaluator contract."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol

from cola.paths import LayerPath, measure


class ContractViolation(ValueError):
    """Caller passed an input the evaluator cannot interpret (bad shape, bad token)."""


class EvaluationError(RuntimeError):
    """An evaluation could not produce an outcome; ``raw`` holds the offending response."""

    def __init__(self, message: str, raw: str | None = None) -> None:
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class TaskInstance:
    id: str
    payload: Any
    expected: Any

    def to_json(self) -> dict:
        return {"id": self.id, "payload": self.payload, "expected": self.expected}

    @classmethod
    def from_json(cls, obj: dict) -> TaskInstance:
        missing = {"id", "payload", "expected"} - set(obj)
        if missing:
            raise ValueError(f"instance record missing {sorted(missing)}")
        if not isinstance(obj["id"], str):
            raise ValueError("instance id must be a string")
        return cls(obj["id"], obj["payload"], obj["expected"])


@dataclass(frozen=True)
class EvaluationOutcome:
    correct: bool
    reward: float
    depth: int
    non_recurrent_depth: int
    answer: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "correct": self.correct,
            "reward": self.reward,
            "depth": self.depth,
            "non_recurrent_depth": self.non_recurrent_depth,
        }
        if self.answer is not None:
            out["answer"] = self.answer
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_json(cls, obj: dict) -> EvaluationOutcome:
        return cls(bool(obj["correct"]), float(obj["reward"]), int(obj["depth"]),
                   int(obj["non_recurrent_depth"]), obj.get("answer"), obj.get("error"))


def reward_for(correct: bool, depth: int, num_layers: int, rho: float = 0.0) -> float:
    return 1.0 - rho * depth / num_layers if correct else 0.0


def make_outcome(correct: bool, path: LayerPath, num_layers: int, rho: float = 0.0,
                 answer: str | None = None) -> EvaluationOutcome:
    depth, distinct = measure(path)
    return EvaluationOutcome(bool(correct), reward_for(correct, depth, num_layers, rho),
                             depth, distinct, answer)


def failed_outcome(path: LayerPath, message: str) -> EvaluationOutcome:
    depth, distinct = measure(path)
    return EvaluationOutcome(False, 0.0, depth, distinct, None, message)


class Evaluator(Protocol):
    """Anything that can run a layer path on an instance and judge the result."""

    @property
    def num_layers(self) -> int: ...

    def evaluate(self, instance: TaskInstance, path: LayerPath,
                 rho: float = 0.0) -> EvaluationOutcome: ...


# Failures a search records and scores as reward 0 instead of aborting.
RECOVERABLE_ERRORS = (EvaluationError, OSError)
