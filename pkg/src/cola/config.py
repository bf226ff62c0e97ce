"""Experiment configuration: one JSON document, validated by pydantic."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from cola.paths import SpaceMode
from cola.search import SearchConfig

ModeName = Literal["joint", "skip", "recur", "original"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SynthParams(_Strict):
    num_layers: int = Field(8, ge=1)
    state_dim: int = Field(1, ge=1)
    modulus: int = Field(3, ge=2)
    passthrough: int = Field(0, ge=0)
    count: int = Field(50, ge=1)


class ToyParams(_Strict):
    num_layers: int = Field(8, ge=1)
    model_dim: int = Field(16, ge=1)
    vocab_size: int = Field(8, ge=2)
    seq_len: int = Field(6, ge=1)
    count: int = Field(50, ge=1)
    regime: Literal["self", "adversarial"] = "self"
    perturbation: float = Field(1.0, ge=0.0)


class ExternalParams(_Strict):
    num_layers: int = Field(32, ge=1)
    timeout: float = Field(30.0, gt=0.0)


class SearchParams(_Strict):
    simulations: int = Field(200, ge=1)
    c: float = Field(math.sqrt(2.0), ge=0.0)
    length_penalty: float = Field(5.0, ge=0.0, alias="lambda")
    epsilon: float = Field(0.1, ge=0.0, le=1.0)
    rho: float = 0.0
    l_max: int = Field(0, ge=0, description="0 selects twice the layer count")


class OracleParams(_Strict):
    max_layers: int = Field(10, ge=1)
    budget: Optional[int] = Field(None, ge=1, description="max evaluator calls per instance")


class ExperimentConfig(_Strict):
    backend: Literal["synth", "toy", "external"] = "synth"
    server: Optional[str] = Field(None, description="command line or host:port of an evaluator")
    synth: SynthParams = SynthParams()
    toy: ToyParams = ToyParams()
    external: ExternalParams = ExternalParams()
    search: SearchParams = SearchParams()
    oracle: OracleParams = OracleParams()
    dataset: Optional[str] = None
    dataset_name: Optional[str] = None
    sample_size: int = Field(500, ge=1)
    modes: list[ModeName] = Field(default_factory=lambda: ["joint"], min_length=1)
    seed: int = 0
    out: str = "runs/default"
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check(self) -> ExperimentConfig:
        if self.backend == "external" and not self.server:
            raise ValueError("external backend needs 'server'")
        self.modes = sorted(set(self.modes), key=["original", "skip", "recur", "joint"].index)
        return self

    @property
    def num_layers(self) -> int:
        return getattr(self, self.backend).num_layers

    def search_config(self, mode: str) -> SearchConfig:
        s = self.search
        return SearchConfig(simulations=s.simulations, c=s.c, length_penalty=s.length_penalty,
                            epsilon=s.epsilon, rho=s.rho,
                            mode=SpaceMode.JOINT if mode == "original" else SpaceMode(mode),
                            l_max=s.l_max, seed=self.seed)

    def snapshot(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file (or defaults) and apply flat overrides; raises pydantic ValidationError."""
    data: dict = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = data
        *parents, leaf = key.split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = value
    return ExperimentConfig.model_validate(data)


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema(by_alias=True)
