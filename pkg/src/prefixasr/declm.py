"""Decoder-only transformer LM over mixed audio/text sequences.

Audio embeddings act as an in-context prefix: they occupy positions 0..M-1,
the bos-prefixed transcript follows at M.., and next-token loss is taken on
text positions only. The base weights stay frozen during joint training;
LoRA adapters on the attention q/k/v/output projections carry the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (attention, causal_mask, init_bias, init_embedding,
                     init_ones, init_weight)
from .numcore import Tensor, no_grad, ops, param
from .numcore.rng import generator
from .tokenizer import BOS, EOS, PAD, UNK

MAX_DECODE_TOKENS = 200

LORA_TARGETS = ("wq", "wk", "wv", "wo")


@dataclass
class LmConfig:
    vocab_size: int
    d_llm: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 512
    pad_id: int = PAD
    unk_id: int = UNK
    bos_id: int = BOS
    eos_id: int = EOS
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_llm % self.num_heads != 0:
            raise ValueError("d_llm must divide evenly into heads")


@dataclass
class LoraAdapter:
    """Low-rank delta (alpha/rank) * up @ down; rank 0 means absent."""
    rank: int
    alpha: float
    down: Tensor | None = None  # (d_in, rank)
    up: Tensor | None = None    # (rank, d_out)

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, d_out: int,
               rank: int, alpha: float) -> "LoraAdapter":
        if rank == 0:
            return cls(rank=0, alpha=alpha)
        down = init_weight(rng, d_in, rank)
        # zero-init up so the delta starts at exactly zero
        up = param(np.zeros((rank, d_out)))
        return cls(rank=rank, alpha=alpha, down=down, up=up)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank if self.rank else 0.0

    def delta(self) -> np.ndarray:
        return self.scale * (self.down.data @ self.up.data)


def lora_linear(x: Tensor, w: Tensor, b: Tensor | None,
                adapter: LoraAdapter | None) -> Tensor:
    y = ops.linear(x, w, b)
    if adapter is not None and adapter.rank > 0:
        y = y + ((x @ adapter.down) @ adapter.up) * adapter.scale
    return y


def merge_lora(w: Tensor, adapter: LoraAdapter) -> Tensor:
    """Fold the adapter into the base weight; no-op at rank 0."""
    if adapter is None or adapter.rank == 0:
        return Tensor(w.data.copy())
    return Tensor(w.data + adapter.delta().astype(w.data.dtype))


class DecoderLM:
    def __init__(self, config: LmConfig, seed: int = 0,
                 lora_rank: int = 0, lora_alpha: float = 16.0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.adapters: dict[str, LoraAdapter] = {}
        rng = generator(seed, "lm")
        lora_rng = generator(seed, "lora")
        d, f = config.d_llm, config.ffn_dim
        p = self.params
        p["tok"] = init_embedding(rng, config.vocab_size, d)
        p["pos"] = init_embedding(rng, config.max_positions, d)
        for i in range(config.num_layers):
            pre = f"block{i}."
            p[pre + "ln1.g"] = init_ones(d)
            p[pre + "ln1.b"] = init_bias(d)
            for name in LORA_TARGETS:
                p[pre + name] = init_weight(rng, d, d)
                p[pre + name + ".b"] = init_bias(d)
                self.adapters[pre + name] = LoraAdapter.create(
                    lora_rng, d, d, lora_rank, lora_alpha)
            p[pre + "ln2.g"] = init_ones(d)
            p[pre + "ln2.b"] = init_bias(d)
            p[pre + "ffn1.w"] = init_weight(rng, d, f)
            p[pre + "ffn1.b"] = init_bias(f)
            p[pre + "ffn2.w"] = init_weight(rng, f, d)
            p[pre + "ffn2.b"] = init_bias(d)
        p["ln_f.g"] = init_ones(d)
        p["ln_f.b"] = init_bias(d)
        p["out.w"] = init_weight(rng, d, config.vocab_size)
        p["out.b"] = init_bias(config.vocab_size)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def lora_parameters(self) -> dict[str, Tensor]:
        out = {}
        for key, ad in self.adapters.items():
            if ad.rank > 0:
                out[key + ".down"] = ad.down
                out[key + ".up"] = ad.up
        return out

    def _block(self, i: int, x: Tensor, mask: np.ndarray | None,
               cache: dict | None = None, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        p = self.params
        pre = f"block{i}."
        drop = self.config.dropout if train else 0.0
        h = ops.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = lora_linear(h, p[pre + "wq"], p[pre + "wq.b"], self.adapters[pre + "wq"])
        k = lora_linear(h, p[pre + "wk"], p[pre + "wk.b"], self.adapters[pre + "wk"])
        v = lora_linear(h, p[pre + "wv"], p[pre + "wv.b"], self.adapters[pre + "wv"])
        if cache is not None:
            ck, cv = cache.get(i, (None, None))
            kd = k.data if ck is None else np.concatenate([ck, k.data], axis=0)
            vd = v.data if cv is None else np.concatenate([cv, v.data], axis=0)
            cache[i] = (kd, vd)
            k, v = Tensor(kd), Tensor(vd)
        att = attention(q, k, v, self.config.num_heads, mask=mask,
                        dropout_p=drop, rng=rng)
        x = x + lora_linear(att, p[pre + "wo"], p[pre + "wo.b"], self.adapters[pre + "wo"])
        h = ops.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = ops.swish(ops.linear(h, p[pre + "ffn1.w"], p[pre + "ffn1.b"]))
        if drop > 0.0 and rng is not None:
            h = ops.dropout(h, drop, rng)
        x = x + ops.linear(h, p[pre + "ffn2.w"], p[pre + "ffn2.b"])
        return x

    def _embed(self, audio_embeds: Tensor | None, text_ids,
               pos_offset: int = 0) -> Tensor:
        parts = []
        if audio_embeds is not None and audio_embeds.shape[0] > 0:
            parts.append(audio_embeds)
        if len(text_ids) > 0:
            parts.append(ops.embedding(self.params["tok"], np.asarray(text_ids)))
        if not parts:
            raise ValueError("empty mixed sequence")
        x = parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)
        S = x.shape[0]
        if pos_offset + S > self.config.max_positions:
            raise ValueError(
                f"sequence overflow: audio={0 if audio_embeds is None else audio_embeds.shape[0]}"
                f" + text={len(text_ids)} exceeds max_positions={self.config.max_positions}")
        return x + ops.narrow(self.params["pos"], 0, pos_offset, S)

    def forward_mixed(self, audio_embeds: Tensor | None, text_ids,
                      train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Per-position logits for [audio || text] under a causal mask."""
        x = self._embed(audio_embeds, text_ids)
        mask = causal_mask(x.shape[0], dtype=x.data.dtype)
        for i in range(self.config.num_layers):
            x = self._block(i, x, mask, train=train, rng=rng)
        x = ops.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])
        return ops.linear(x, self.params["out.w"], self.params["out.b"])

    def loss_mixed(self, audio_embeds: Tensor | None, text_tokens,
                   train: bool = False, rng: np.random.Generator | None = None,
                   input_tokens=None) -> Tensor:
        """Mean next-token NLL over text positions.

        text_tokens are the target transcript ids (no specials). Inputs are
        bos-prefixed; targets are the transcript plus eos. input_tokens, when
        given, replaces the transcript on the input side only (token masking).
        """
        cfg = self.config
        inputs = [cfg.bos_id] + list(input_tokens if input_tokens is not None
                                     else text_tokens)
        targets = list(text_tokens) + [cfg.eos_id]
        M = 0 if audio_embeds is None else audio_embeds.shape[0]
        logits = self.forward_mixed(audio_embeds, inputs, train=train, rng=rng)
        text_logits = ops.narrow(logits, 0, M, len(targets))
        logp = ops.log_softmax(text_logits)
        picked = ops.gather_rows(logp, np.asarray(targets))
        return -picked.mean()

    def greedy_decode(self, audio_embeds: Tensor | None,
                      max_len: int = MAX_DECODE_TOKENS) -> list[int]:
        """Deterministic argmax decoding with an incremental KV cache."""
        cfg = self.config
        with no_grad():
            cache: dict = {}
            prefix = [cfg.bos_id]
            x = self._embed(audio_embeds, prefix)
            S = x.shape[0]
            mask = causal_mask(S, dtype=x.data.dtype)
            for i in range(cfg.num_layers):
                x = self._block(i, x, mask, cache=cache)
            x = ops.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])
            logits = ops.linear(x, self.params["out.w"], self.params["out.b"])
            out: list[int] = []
            pos = S
            next_id = int(logits.data[-1].argmax())
            while len(out) < max_len:
                if next_id == cfg.eos_id:
                    break
                out.append(next_id)
                if pos >= cfg.max_positions - 1:
                    break  # position table exhausted
                x = self._embed(None, [next_id], pos_offset=pos)
                for i in range(cfg.num_layers):
                    x = self._block(i, x, None, cache=cache)
                x = ops.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])
                logits = ops.linear(x, self.params["out.w"], self.params["out.b"])
                next_id = int(logits.data[-1].argmax())
                pos += 1
            return out

    def merged_params(self) -> dict[str, Tensor]:
        """Base weights with every adapter folded in; adapter-free forward."""
        out = {}
        for name, w in self.params.items():
            ad = self.adapters.get(name)
            out[name] = merge_lora(w, ad) if ad is not None else Tensor(w.data.copy())
        return out
