"""Run configuration: a single versioned JSON document.

Every run is fully described by a RunConfig; the seed is mandatory (there is
no wall-clock fallback) and configs round-trip losslessly through JSON.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

CONFIG_VERSION = 1

TASKS = ("linear_identity", "linear_random_map", "toy_lm", "theory_sweep", "verify")
ARCHS = ("baseline", "resnet", "v1", "v2", "v3", "transformer", "dca")


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


@dataclass
class OptimizerSpec:
    name: str = "sgd"
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "constant"
    warmup_steps: int = 0

    def validate(self) -> None:
        if self.name not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer: {self.name}")
        if self.schedule not in ("constant", "inverse_sqrt"):
            raise ConfigError(f"unknown schedule: {self.schedule}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


@dataclass
class ModelSpec:
    d: int = 100
    layers: int = 10
    ranks: list[int] = field(default_factory=lambda: [3] * 10)
    k: int | None = None
    init_std: float | None = None      # None: 1/sqrt(d) (linear models)
    heads: int = 4
    seq_len: int = 64
    vocab_size: int = 256
    ffn_mult: int = 4


@dataclass
class RunConfig:
    task: str
    arch: str
    seed: int
    out_dir: str
    steps: int = 1000
    batch_size: int = 100
    eval_batches: int = 4
    checkpoint_every: int = 0          # 0: only at the end
    corpus: str | None = None          # toy_lm source file (raw bytes)
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    version: int = CONFIG_VERSION

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version: {self.version}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task: {self.task}")
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch: {self.arch}")
        if self.task in ("linear_identity", "linear_random_map"):
            if self.arch not in ("baseline", "resnet", "v1", "v2", "v3"):
                raise ConfigError(f"task {self.task} needs a linear arch, got {self.arch}")
            if len(self.model.ranks) != self.model.layers:
                raise ConfigError(
                    f"ranks must list {self.model.layers} entries, got {len(self.model.ranks)}"
                )
        if self.task == "toy_lm" and self.arch not in ("transformer", "dca"):
            raise ConfigError(f"task toy_lm needs transformer or dca, got {self.arch}")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer (wall-clock seeding is not allowed)")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        self.optimizer.validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        try:
            model = ModelSpec(**doc.pop("model", {}))
            optimizer = OptimizerSpec(**doc.pop("optimizer", {}))
            cfg = cls(model=model, optimizer=optimizer, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_json(path.read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())
