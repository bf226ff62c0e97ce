"""Evaluation backends: synthetic affine machine, toy transformer, external server."""

from cola.executors.base import (
    ContractViolation,
    EvaluationError,
    EvaluationOutcome,
    Evaluator,
    TaskInstance,
    failed_outcome,
    make_outcome,
    reward_for,
)
from cola.executors.external import (
    Connection,
    ConnectionFailed,
    ExternalEvaluator,
    SubprocessConnection,
    TcpConnection,
    connect,
    external_evaluate,
)
from cola.executors.synth import SynthMachine, synth_generate
from cola.executors.toy import ToyTransformer, toy_build, toy_generate


def synth_evaluate(machine: SynthMachine, instance: TaskInstance, path, rho: float = 0.0):
    return machine.evaluate(instance, path, rho)


def toy_evaluate(model: ToyTransformer, instance: TaskInstance, path, rho: float = 0.0):
    return model.evaluate(instance, path, rho)


__all__ = [
    "Connection", "ConnectionFailed", "ContractViolation", "EvaluationError",
    "EvaluationOutcome", "Evaluator", "ExternalEvaluator", "SubprocessConnection",
    "SynthMachine", "TaskInstance", "TcpConnection", "ToyTransformer", "connect",
    "external_evaluate", "failed_outcome", "make_outcome", "reward_for", "synth_evaluate",
    "synth_generate", "toy_build", "toy_evaluate", "toy_generate",
]
