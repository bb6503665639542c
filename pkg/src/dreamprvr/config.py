"""Run configuration: nested sections, strict key checking, JSON files."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .objectives import LossWeights, check_simplex

SEED_ENV = "DREAMPRVR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class DiffusionConfig:
    T: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.05
    reverse_noise: str = "standard"
    detach_registers: bool = False
    dre_blocks: int = 2


@dataclass
class ModelConfig:
    d: int = 384
    heads: int = 4
    n_blocks: int = 8
    n_registers: int = 6
    m_clips: int = 32
    positional: bool = False
    aggregator: str = "softmax"


@dataclass
class TextConfig:
    tps_gamma: float = 0.1
    tps_independent: bool = True


@dataclass
class LossConfig:
    margin: float = 0.2
    lambda_c: float = 0.02
    lambda_f: float = 0.02
    lambda_dre: float = 1.0
    lambda_kl: float = 1.0
    lambda_d: float = 1.0
    lambda_q: float = 0.5
    tau_nce: float = 0.05
    tau_qsp: float = 0.1
    div_margin: float = 0.2
    div_scale: float = 5.0


@dataclass
class SimConfig:
    alpha_f: float = 0.3
    alpha_c: float = 0.7


@dataclass
class AblationConfig:
    no_registers: bool = False
    adaptive_pool: bool = False
    no_dre: bool = False
    no_pvs: bool = False
    no_loss_pvs: bool = False
    no_loss_dre: bool = False
    no_loss_tssl: bool = False


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 2.5e-4
    seed: int = 0
    precision: str = "float64"
    checkpoint_every: int = 1
    eval_every: int = 0


@dataclass
class DataConfig:
    path: str = ""
    train_split: str = "train"
    eval_split: str = "test"


@dataclass
class EvalConfig:
    k_list: list[int] | None = None
    seed: int = 1234


SECTIONS = {
    "diffusion": DiffusionConfig,
    "model": ModelConfig,
    "text": TextConfig,
    "loss": LossConfig,
    "sim": SimConfig,
    "ablation": AblationConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    text: TextConfig = field(default_factory=TextConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RunConfig:
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, section_cls in SECTIONS.items():
            values = raw.get(name, {}) or {}
            allowed = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown config keys: {sorted(f'{name}.{k}' for k in bad)}")
            sections[name] = section_cls(**values)
        cfg = cls(**sections)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides: dict[str, Any]) -> RunConfig:
        """Copy with dotted-key overrides such as ``{"model.d": 8}``."""
        raw = self.to_dict()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in raw or name not in raw[section]:
                raise ConfigError(f"unknown config key: {key}")
            raw[section][name] = value
        return RunConfig.from_dict(raw)

    def loss_weights(self) -> LossWeights:
        lw = dataclasses.asdict(self.loss)
        if self.ablation.no_loss_tssl:
            lw["lambda_d"] = lw["lambda_q"] = 0.0
        if self.ablation.no_loss_pvs:
            lw["lambda_kl"] = 0.0
        if self.ablation.no_loss_dre:
            lw["lambda_dre"] = 0.0
        return LossWeights(**lw)

    def validate(self) -> None:
        m, dif, tr = self.model, self.diffusion, self.train
        if m.d < 1 or m.heads < 1 or m.d % m.heads:
            raise ConfigError(f"model.d={m.d} must be a positive multiple of model.heads={m.heads}")
        if m.n_blocks < 1 or m.n_registers < 0 or m.m_clips < 1:
            raise ConfigError("model.n_blocks and model.m_clips must be >= 1, model.n_registers >= 0")
        if m.aggregator not in ("softmax", "mean"):
            raise ConfigError(f"model.aggregator must be 'softmax' or 'mean', got {m.aggregator!r}")
        if dif.T < 1 or not 0 < dif.beta_start <= dif.beta_end < 1:
            raise ConfigError("diffusion.T >= 1 and 0 < beta_start <= beta_end < 1 required")
        if dif.reverse_noise not in ("standard", "pvs"):
            raise ConfigError(f"diffusion.reverse_noise must be 'standard' or 'pvs', got {dif.reverse_noise!r}")
        if tr.epochs < 0 or tr.batch_size < 2 or tr.lr <= 0:
            raise ConfigError("train.epochs >= 0, train.batch_size >= 2 and train.lr > 0 required")
        if tr.precision not in ("float64", "float32"):
            raise ConfigError(f"train.precision must be float64 or float32, got {tr.precision!r}")
        try:
            check_simplex(self.sim.alpha_f, self.sim.alpha_c)
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.text.tps_gamma < 0:
            raise ConfigError("text.tps_gamma must be non-negative")

    @property
    def uses_registers(self) -> bool:
        return not self.ablation.no_registers and self.model.n_registers > 0


def load_config(path: str | os.PathLike | None = None, env: dict[str, str] | None = None) -> RunConfig:
    """Read a JSON config; ``DREAMPRVR_SEED`` in the environment overrides ``train.seed``."""
    raw: dict[str, Any] = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
    cfg = RunConfig.from_dict(raw)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        cfg = cfg.with_overrides({"train.seed": int(env[SEED_ENV])})
    return cfg


def save_config(cfg: RunConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
