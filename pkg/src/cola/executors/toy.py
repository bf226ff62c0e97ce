"""A tiny seeded transformer whose layers can be chained in any order.

Every layer is a pre-norm block (causal self-attention then a feed-forward
network), both added back to the residual stream with a fixed scale.  Because
each sub-block sees a layer-normed input, its contribution is bounded and the
residual stream grows at most linearly in path length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cola.executors.base import ContractViolation, EvaluationOutcome, TaskInstance, make_outcome
from cola.paths import LayerPath

RESIDUAL_SCALE = 0.5
LABEL_REGIMES = ("self", "adversarial")


def _layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ToyLayer:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = _layer_norm(x)
        q, k, v = h @ self.wq, h @ self.wk, h @ self.wv
        scores = q @ k.T / np.sqrt(q.shape[-1])
        t = x.shape[0]
        scores = np.where(np.tril(np.ones((t, t), dtype=bool)), scores, -np.inf)
        x = x + RESIDUAL_SCALE * (_softmax(scores) @ v @ self.wo)
        h = _layer_norm(x)
        return x + RESIDUAL_SCALE * (np.maximum(h @ self.w1, 0.0) @ self.w2)


class ToyTransformer:
    def __init__(self, seed: int, num_layers: int, model_dim: int, vocab_size: int,
                 max_len: int = 64, perturbation: float = 0.0, perturb_seed: int = 0) -> None:
        if num_layers < 1 or model_dim < 1 or vocab_size < 2:
            raise ValueError("need num_layers >= 1, model_dim >= 1, vocab_size >= 2")
        self.seed = seed
        self.model_dim = model_dim
        self.vocab_size = vocab_size
        self.max_len = max_len
        rng = np.random.default_rng(seed)
        d, f = model_dim, 2 * model_dim

        def mat(rows: int, cols: int) -> np.ndarray:
            return rng.standard_normal((rows, cols)) / np.sqrt(rows)

        self.embedding = rng.standard_normal((vocab_size, d))
        self.positions = 0.1 * rng.standard_normal((max_len, d))
        self.layers = [ToyLayer(mat(d, d), mat(d, d), mat(d, d), mat(d, d), mat(d, f), mat(f, d))
                       for _ in range(num_layers)]
        self.head = mat(d, vocab_size)
        if perturbation:
            noise = np.random.default_rng(perturb_seed)
            self.layers = [ToyLayer(*(w + perturbation * noise.standard_normal(w.shape)
                                      / np.sqrt(w.shape[0])
                                      for w in (l.wq, l.wk, l.wv, l.wo, l.w1, l.w2)))
                           for l in self.layers]
            self.head = self.head + perturbation * noise.standard_normal(self.head.shape) / np.sqrt(d)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def _check_tokens(self, tokens) -> np.ndarray:
        arr = np.asarray(tokens)
        if arr.ndim != 1 or arr.size == 0 or not np.issubdtype(arr.dtype, np.integer):
            raise ContractViolation("payload must be a non-empty list of integer token ids")
        if arr.size > self.max_len:
            raise ContractViolation(f"sequence length {arr.size} exceeds max_len {self.max_len}")
        if arr.min() < 0 or arr.max() >= self.vocab_size:
            raise ContractViolation(f"token id outside [0, {self.vocab_size})")
        return arr

    def hidden(self, tokens, path: LayerPath) -> np.ndarray:
        arr = self._check_tokens(tokens)
        x = self.embedding[arr] + self.positions[: arr.size]
        for i in path:
            x = self.layers[i](x)
        return x

    def logits(self, tokens, path: LayerPath) -> np.ndarray:
        return _layer_norm(self.hidden(tokens, path)[-1]) @ self.head

    def predict(self, tokens, path: LayerPath) -> int:
        return int(np.argmax(self.logits(tokens, path)))

    def evaluate(self, instance: TaskInstance, path: LayerPath,
                 rho: float = 0.0) -> EvaluationOutcome:
        label = self.predict(instance.payload, path)
        return make_outcome(label == instance.expected, path, self.num_layers, rho,
                            answer=str(label))

    def to_json(self) -> dict:
        return {"kind": "toy", "seed": self.seed, "num_layers": self.num_layers,
                "model_dim": self.model_dim, "vocab_size": self.vocab_size,
                "max_len": self.max_len}

    @classmethod
    def from_json(cls, obj: dict) -> ToyTransformer:
        return cls(int(obj["seed"]), int(obj["num_layers"]), int(obj["model_dim"]),
                   int(obj["vocab_size"]), int(obj.get("max_len", 64)))


def toy_build(seed: int, num_layers: int, model_dim: int, vocab_size: int) -> ToyTransformer:
    return ToyTransformer(seed, num_layers, model_dim, vocab_size)


def toy_generate(model: ToyTransformer, count: int, seq_len: int, seed: int,
                 regime: str = "self", perturbation: float = 1.0) -> list[TaskInstance]:
    """Random token sequences labelled by the full model ("self") or by a perturbed
    copy of it ("adversarial"), so the original path is wrong on some inputs."""
    if regime not in LABEL_REGIMES:
        raise ValueError(f"regime must be one of {LABEL_REGIMES}, got {regime!r}")
    rng = np.random.default_rng(seed)
    labeller = model
    if regime == "adversarial":
        labeller = ToyTransformer(model.seed, model.num_layers, model.model_dim,
                                  model.vocab_size, model.max_len, perturbation, seed + 1)
    identity = LayerPath.identity(model.num_layers)
    out = []
    for j in range(count):
        tokens = [int(t) for t in rng.integers(0, model.vocab_size, size=seq_len)]
        out.append(TaskInstance(f"toy-{j:04d}", tokens, labeller.predict(tokens, identity)))
    return out
