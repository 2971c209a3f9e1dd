"""Assembled encoder + bridge + LM system and its checkpoint mapping."""

from __future__ import annotations

import numpy as np

from .bridge import Bridge, StackConfig
from .checkpoint import CheckpointError, ModelCheckpoint
from .config import RunConfig, from_dict
from .declm import DecoderLM, LmConfig
from .encoder import ConformerEncoder, EncoderConfig
from .frontend import FeatureMatrix, FeatureNormalizer
from .numcore import Tensor, no_grad
from .tokenizer import CharTokenizer


def encoder_config(cfg: RunConfig, ctc_vocab: int) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(
        num_layers=e.num_layers, d_model=e.d_model, ffn_dim=e.ffn_dim,
        conv_kernel=e.conv_kernel, num_heads=e.num_heads,
        subsample_stride=e.subsample_stride, ctc_vocab=ctc_vocab,
        subsample_channels=e.subsample_channels, max_frames=e.max_frames,
        dropout=e.dropout)


def lm_config(cfg: RunConfig, vocab_size: int) -> LmConfig:
    m = cfg.lm
    return LmConfig(
        vocab_size=vocab_size, d_llm=m.d_llm, num_layers=m.num_layers,
        num_heads=m.num_heads, ffn_dim=m.ffn_dim,
        max_positions=m.max_positions, dropout=m.dropout)


class AsrSystem:
    """Conformer encoder -> frame stacking bridge -> decoder-only LM."""

    def __init__(self, cfg: RunConfig, tokenizer: CharTokenizer,
                 normalizer: FeatureNormalizer | None = None, seed: int = 0):
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.normalizer = normalizer
        self.encoder = ConformerEncoder(
            encoder_config(cfg, tokenizer.ctc_vocab_size), seed=seed)
        self.bridge = Bridge(StackConfig(
            n=cfg.bridge.stack_n, d_encoder=cfg.encoder.d_model,
            d_llm=cfg.lm.d_llm), seed=seed)
        self.lm = DecoderLM(lm_config(cfg, tokenizer.vocab_size), seed=seed,
                            lora_rank=cfg.lora.rank, lora_alpha=cfg.lora.alpha)

    # -- parameter groups -------------------------------------------------

    def joint_trainable(self) -> dict:
        """Encoder (CTC head dropped) + bridge + LoRA (+ LM embeddings if set)."""
        out = {}
        out.update({"encoder." + k: v
                    for k, v in self.encoder.parameters(include_ctc_head=False).items()})
        out.update({"bridge." + k: v for k, v in self.bridge.parameters().items()})
        out.update({"lora." + k: v for k, v in self.lm.lora_parameters().items()})
        if self.cfg.lm.train_embeddings:
            out["lm.tok"] = self.lm.params["tok"]
            out["lm.pos"] = self.lm.params["pos"]
        return out

    def all_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        out.update({"encoder." + k: v.data for k, v in self.encoder.params.items()})
        out.update({"bridge." + k: v.data for k, v in self.bridge.params.items()})
        out.update({"lm." + k: v.data for k, v in self.lm.params.items()})
        out.update({"lora." + k: v.data for k, v in self.lm.lora_parameters().items()})
        if self.normalizer is not None:
            out["frontend.mel_mean"] = self.normalizer.mean
            out["frontend.mel_std"] = self.normalizer.std
        return out

    # -- forward ----------------------------------------------------------

    def embed_audio(self, features: FeatureMatrix, train: bool = False,
                    rng=None) -> Tensor:
        dtype = self.encoder.params["ctc.w"].data.dtype
        emb = self.encoder.forward(Tensor(features.frames.astype(dtype)),
                                   train=train, rng=rng)
        return self.bridge.forward(emb)

    def joint_loss(self, features: FeatureMatrix, text: str,
                   input_text_ids=None, train: bool = False, rng=None) -> Tensor:
        audio = self.embed_audio(features, train=train, rng=rng)
        target_ids = self.tokenizer.encode(text)
        return self.lm.loss_mixed(audio, target_ids, train=train, rng=rng,
                                  input_tokens=input_text_ids)

    def transcribe(self, features: FeatureMatrix,
                   max_len: int | None = None) -> str:
        with no_grad():
            audio = self.embed_audio(features)
            ids = self.lm.greedy_decode(
                audio, max_len=max_len or self.cfg.eval.max_decode_tokens)
        return self.tokenizer.decode(ids)

    # -- checkpoint interop ------------------------------------------------

    def to_checkpoint(self, metadata: dict | None = None) -> ModelCheckpoint:
        meta = {"tokenizer": self.tokenizer.to_dict()}
        meta.update(metadata or {})
        return ModelCheckpoint(config=self.cfg.to_dict(),
                               tensors=self.all_tensors(), metadata=meta)

    def load_tensors(self, tensors: dict[str, np.ndarray],
                     require_all: bool = True) -> None:
        groups = {
            "encoder.": self.encoder.params,
            "bridge.": self.bridge.params,
            "lm.": self.lm.params,
        }
        lora = {"lora." + k: v for k, v in self.lm.lora_parameters().items()}
        for name, arr in tensors.items():
            if name.startswith("frontend."):
                continue
            target = None
            for prefix, store in groups.items():
                if name.startswith(prefix):
                    target = store.get(name[len(prefix):])
            if name in lora:
                target = lora[name]
            if target is None:
                raise CheckpointError(f"checkpoint tensor {name!r} has no home")
            if target.data.shape != arr.shape:
                raise CheckpointError(
                    f"{name}: shape {arr.shape} != model {target.data.shape}")
            target.data = arr.astype(target.data.dtype)
        if require_all:
            missing = set(self.all_tensors()) - set(tensors)
            missing -= {"frontend.mel_mean", "frontend.mel_std"}
            if missing:
                raise CheckpointError(f"checkpoint missing tensors {sorted(missing)}")

    @classmethod
    def from_encoder_checkpoint(cls, cfg: RunConfig, ckpt: ModelCheckpoint,
                                seed: int = 0) -> "AsrSystem":
        """Start joint training from an encoder-pretraining checkpoint.

        Only encoder weights and feature statistics carry over; bridge, LM
        and adapters are freshly initialized from `seed`.
        """
        tokenizer = CharTokenizer.from_dict(ckpt.metadata["tokenizer"])
        normalizer = None
        if "frontend.mel_mean" in ckpt.tensors:
            normalizer = FeatureNormalizer(
                mean=ckpt.tensors["frontend.mel_mean"].astype(np.float32),
                std=ckpt.tensors["frontend.mel_std"].astype(np.float32))
        system = cls(cfg, tokenizer, normalizer, seed=seed)
        system.load_tensors({k: v for k, v in ckpt.tensors.items()
                             if k.startswith("encoder.")}, require_all=False)
        return system

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint, seed: int = 0) -> "AsrSystem":
        cfg = from_dict(ckpt.config)
        tokenizer = CharTokenizer.from_dict(ckpt.metadata["tokenizer"])
        normalizer = None
        if "frontend.mel_mean" in ckpt.tensors:
            normalizer = FeatureNormalizer(
                mean=ckpt.tensors["frontend.mel_mean"].astype(np.float32),
                std=ckpt.tensors["frontend.mel_std"].astype(np.float32))
        system = cls(cfg, tokenizer, normalizer, seed=seed)
        system.load_tensors(ckpt.tensors)
        return system

    def merged_checkpoint(self, metadata: dict | None = None) -> ModelCheckpoint:
        """Adapters folded into the LM base; no "lora.*" keys remain."""
        tensors = {k: v for k, v in self.all_tensors().items()
                   if not k.startswith("lora.")}
        for name, t in self.lm.merged_params().items():
            tensors["lm." + name] = t.data
        cfg = from_dict(self.cfg.to_dict())
        cfg.lora.rank = 0
        meta = {"tokenizer": self.tokenizer.to_dict(), "merged_lora": True}
        meta.update(metadata or {})
        return ModelCheckpoint(config=cfg.to_dict(), tensors=tensors, metadata=meta)
