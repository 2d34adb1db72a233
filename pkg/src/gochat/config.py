"""Dataclass configuration for every pipeline stage, with JSON round-trip.

One structured file configures a whole run; unknown keys are rejected before
any stage touches its outputs. Defaults follow the reference setting: 500-d
word embeddings, 500/50 hierarchical encoder hidden sizes, 14 sub-goals,
Adam at 1e-3 for 10 epochs, reward mix alpha=1 / beta=0.001, discount 0.99,
and a 20-turn simulation cap.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    n: int = 30  # tokens per utterance
    min_count: int = 1
    max_vocab: int = 20000
    max_turns: int = 20
    strict: bool = True

    def validate(self):
        if self.n < 2:
            raise ConfigError("corpus.n must be >= 2")
        if self.min_count < 1:
            raise ConfigError("corpus.min_count must be >= 1")
        if self.max_turns < 1:
            raise ConfigError("corpus.max_turns must be >= 1")


@dataclass
class SubgoalConfig:
    num_subgoals: int = 14
    alpha_doc: float = 0.1
    beta_word: float = 0.01
    iters: int = 200

    def validate(self):
        if self.num_subgoals < 2:
            raise ConfigError("subgoals.num_subgoals must be >= 2")
        if self.iters < 1:
            raise ConfigError("subgoals.iters must be >= 1")
        if self.alpha_doc <= 0 or self.beta_word <= 0:
            raise ConfigError("subgoals priors must be positive")


@dataclass
class EncoderConfig:
    """Hierarchical attention encoder dimensions (manager, critic, judge)."""

    d_emb: int = 500
    d_word: int = 500
    d_dlg: int = 50

    def validate(self):
        if min(self.d_emb, self.d_word, self.d_dlg) < 1:
            raise ConfigError("encoder dims must be positive")


@dataclass
class WorkerConfig:
    """Response generator dimensions."""

    d_emb: int = 500
    d_enc: int = 500
    d_ctx: int = 500
    d_z: int = 100
    d_dec: int = 500

    def validate(self):
        if min(self.d_emb, self.d_enc, self.d_ctx, self.d_z, self.d_dec) < 1:
            raise ConfigError("worker dims must be positive")


@dataclass
class PretrainConfig:
    lr: float = 0.001
    epochs: int = 10
    batch_size: int = 32
    kl_anneal_batches: int = 1000  # linear 0 -> 1 KL weight ramp

    def validate(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("invalid pretrain config")


@dataclass
class TrainConfig:
    """Joint actor-critic stage; field names mirror the config file keys."""

    alpha: float = 1.0
    beta: float = 0.001
    gamma: float = 0.99
    lr: float = 0.001
    epochs: int = 10
    m: int = 20
    episodes_per_update: int = 8
    grad_clip: float = 5.0
    target_sync_every: int = 100
    seed: int = 0
    # Adam normalizes away the beta scaling of worker gradients, so the
    # worker parameter group runs at lr * worker_lr_scale to keep the
    # pretrained generator from drifting under high-variance updates.
    worker_lr_scale: float = 0.1

    def validate(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("train.gamma must be in (0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("train.alpha and train.beta must be >= 0")
        if self.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if self.m < 1 or self.episodes_per_update < 1 or self.epochs < 1:
            raise ConfigError("train horizon/batch fields must be >= 1")
        if self.worker_lr_scale < 0:
            raise ConfigError("train.worker_lr_scale must be >= 0")


@dataclass
class SimulatorConfig:
    knn: int = 5
    end_token: str = "goodbye"
    # explicit actor-critic update budget; None runs train.epochs passes over
    # the opening corpus (episodes_per_update episodes per update)
    updates: int | None = None

    def validate(self):
        if self.knn < 1:
            raise ConfigError("simulator.knn must be >= 1")
        if self.updates is not None and self.updates < 1:
            raise ConfigError("simulator.updates must be >= 1")


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    subgoals: SubgoalConfig = field(default_factory=SubgoalConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    worker: WorkerConfig = field(default_factory=WorkerConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    seed: int = 0

    def validate(self):
        for section in (
            self.corpus,
            self.subgoals,
            self.encoder,
            self.worker,
            self.pretrain,
            self.train,
            self.simulator,
        ):
            section.validate()

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


_SECTIONS = {
    "corpus": CorpusConfig,
    "subgoals": SubgoalConfig,
    "encoder": EncoderConfig,
    "worker": WorkerConfig,
    "pretrain": PretrainConfig,
    "train": TrainConfig,
    "simulator": SimulatorConfig,
}


def _build_section(cls, data: dict, name: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | Path | None) -> RunConfig:
    """Load a run config from JSON; reject unknown sections or keys."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{path}: section {name!r} must be an object")
        try:
            kwargs[name] = _build_section(cls, section, name)
        except TypeError as exc:
            raise ConfigError(f"{path}: section {name!r}: {exc}") from None
    cfg = RunConfig(seed=int(data.get("seed", 0)), **kwargs)
    cfg.validate()
    return cfg
