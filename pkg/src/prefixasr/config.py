"""Declarative run configuration: YAML file + dotted --set overrides.

Unknown keys are rejected so an ablation config can never silently drift from
the architecture it describes. The canonical dict form feeds the checkpoint
config digest.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


LM_PRESETS = {
    "tiny": dict(d_llm=128, num_layers=2, num_heads=4, ffn_dim=256, max_positions=512),
    "small": dict(d_llm=192, num_layers=4, num_heads=4, ffn_dim=384, max_positions=512),
    "base": dict(d_llm=256, num_layers=6, num_heads=8, ffn_dim=512, max_positions=768),
}


@dataclass
class FrontendSection:
    normalize: bool = True


@dataclass
class EncoderSection:
    num_layers: int = 2
    d_model: int = 64
    ffn_dim: int = 128
    conv_kernel: int = 11
    num_heads: int = 4
    subsample_stride: int = 8
    subsample_channels: int = 64
    max_frames: int = 256
    dropout: float = 0.1


@dataclass
class BridgeSection:
    stack_n: int = 3


@dataclass
class LmSection:
    preset: str = "tiny"
    d_llm: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 512
    dropout: float = 0.1
    train_embeddings: bool = False


@dataclass
class LoraSection:
    rank: int = 8
    alpha: float = 16.0


@dataclass
class StageSection:
    peak_lr: float = 1e-3
    final_lr: float = 1e-5
    warmup_steps: int = 200
    total_steps: int = 10000
    max_steps: int = 2000


@dataclass
class TrainingSection:
    seed: int = 0
    batch_seconds: float = 30.0
    mask_fraction: float = 0.0
    sampling_alpha: float = 0.5
    valid_fraction: float = 0.05
    eval_interval: int = 100
    early_stop_evals: int = 10
    grad_clip: float = 1.0
    pretrain: StageSection = field(default_factory=StageSection)
    joint: StageSection = field(default_factory=lambda: StageSection(
        peak_lr=5e-4, final_lr=5e-6, warmup_steps=500, total_steps=20000,
        max_steps=5000))

    def __post_init__(self):
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ConfigError("mask_fraction must lie in [0, 1]")
        if self.batch_seconds <= 0:
            raise ConfigError("batch_seconds must be positive")


@dataclass
class EvalSection:
    max_decode_tokens: int = 200


@dataclass
class RunConfig:
    frontend: FrontendSection = field(default_factory=FrontendSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    bridge: BridgeSection = field(default_factory=BridgeSection)
    lm: LmSection = field(default_factory=LmSection)
    lora: LoraSection = field(default_factory=LoraSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    if cls is LmSection and "preset" in data:
        preset = data["preset"]
        if preset not in LM_PRESETS:
            raise ConfigError(f"{path}: unknown lm preset {preset!r}")
        merged = dict(LM_PRESETS[preset])
        merged.update({k: v for k, v in data.items() if k != "preset"})
        merged["preset"] = preset
        data = merged
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = _SECTION_TYPES.get((cls, name))
        kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_SECTION_TYPES = {
    (RunConfig, "frontend"): FrontendSection,
    (RunConfig, "encoder"): EncoderSection,
    (RunConfig, "bridge"): BridgeSection,
    (RunConfig, "lm"): LmSection,
    (RunConfig, "lora"): LoraSection,
    (RunConfig, "training"): TrainingSection,
    (RunConfig, "eval"): EvalSection,
    (TrainingSection, "pretrain"): StageSection,
    (TrainingSection, "joint"): StageSection,
}


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path=None, overrides=None) -> RunConfig:
    """Read YAML config and apply dotted `key=value` overrides (highest wins)."""
    data = {}
    if path is not None:
        raw = Path(path).read_text()
        data = yaml.safe_load(raw) or {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a scalar")
        node[parts[-1]] = yaml.safe_load(value)
    return from_dict(data)
