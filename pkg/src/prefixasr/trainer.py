"""Two-stage training: CTC encoder pretraining, then joint next-token
training with text masking and language-balanced sampling.

Runs are deterministic for a given (manifest, config, seed): every random
draw comes from a stream keyed by (seed, stage, purpose, step), so resuming
from a saved state reproduces the exact trajectory of an uninterrupted run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctc, frontend
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, StageSection
from .encoder import ConformerEncoder
from .numcore import (AdamState, LrSchedule, NonFiniteGradientError, Tensor,
                      adam_step, clip_grad_norm, no_grad, schedule_lr)
from .numcore.rng import generator
from .system import AsrSystem, encoder_config
from .tokenizer import NUM_SPECIALS, UNK, CharTokenizer


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    audio_path: str
    text: str
    language: str


def read_manifest(path) -> list[ManifestEntry]:
    """One JSON object per line: {audio_path, text, language}."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: bad JSON: {exc}") from exc
        missing = {"audio_path", "text", "language"} - set(obj)
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        if not obj["text"]:
            raise ManifestError(f"{path}:{lineno}: empty transcript")
        entries.append(ManifestEntry(obj["audio_path"], obj["text"], obj["language"]))
    if not entries:
        raise ManifestError(f"{path}: empty manifest")
    return entries


def mask_tokens(text_ids, fraction: float, rng: np.random.Generator,
                unk_id: int = UNK) -> list[int]:
    """Replace each non-special token by unk with probability `fraction`.

    Input-side only; callers keep the original ids as prediction targets.
    """
    if fraction <= 0.0:
        return list(text_ids)
    draws = rng.random(len(text_ids))
    return [unk_id if (i >= NUM_SPECIALS and d < fraction) else i
            for i, d in zip(text_ids, draws)]


def balanced_sampler(per_language_hours: dict[str, float], alpha: float,
                     rng: np.random.Generator) -> str:
    """Draw a language with probability proportional to hours**alpha."""
    langs = sorted(l for l, h in per_language_hours.items() if h > 0)
    if len(langs) < len(per_language_hours):
        import warnings
        empty = sorted(set(per_language_hours) - set(langs))
        warnings.warn(f"languages with no data excluded: {empty}")
    if not langs:
        raise ValueError("no language has data")
    weights = np.array([per_language_hours[l] ** alpha for l in langs])
    probs = weights / weights.sum()
    return langs[rng.choice(len(langs), p=probs)]


@dataclass
class PreparedUtterance:
    entry: ManifestEntry
    raw_frames: np.ndarray  # unnormalized log-mel (T, 80)
    duration: float

    def features(self, normalizer) -> frontend.FeatureMatrix:
        frames = self.raw_frames
        if normalizer is not None:
            frames = normalizer.apply(frames).astype(np.float32)
        return frontend.FeatureMatrix(frames=frames)


def prepare_corpus(entries: list[ManifestEntry]) -> list[PreparedUtterance]:
    out = []
    for e in entries:
        wav = frontend.load_audio(e.audio_path)
        feats = frontend.log_mel(wav)
        out.append(PreparedUtterance(e, feats.frames, wav.duration))
    return out


def split_indices(n: int, valid_fraction: float, seed: int):
    """Deterministic held-out split; empty validation at fraction 0."""
    order = generator(seed, "split").permutation(n)
    n_valid = int(round(n * valid_fraction))
    if valid_fraction > 0 and n > 1:
        n_valid = max(1, n_valid)
    return sorted(order[n_valid:].tolist()), sorted(order[:n_valid].tolist())


def hours_by_language(utts: list[PreparedUtterance]) -> dict[str, float]:
    hours: dict[str, float] = {}
    for u in utts:
        hours[u.entry.language] = hours.get(u.entry.language, 0.0) + u.duration / 3600.0
    return hours


def sample_batch(utts: list[PreparedUtterance], hours: dict[str, float],
                 alpha: float, batch_seconds: float,
                 rng: np.random.Generator) -> list[PreparedUtterance]:
    by_lang: dict[str, list[PreparedUtterance]] = {}
    for u in utts:
        by_lang.setdefault(u.entry.language, []).append(u)
    batch: list[PreparedUtterance] = []
    total = 0.0
    while True:
        lang = balanced_sampler(hours, alpha, rng)
        pool = by_lang[lang]
        u = pool[rng.integers(len(pool))]
        if batch and total + u.duration > batch_seconds:
            break
        batch.append(u)
        total += u.duration
        if total >= batch_seconds:
            break
    return batch


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    log: list[dict] = field(default_factory=list)
    best_valid: float = math.inf
    steps: int = 0
    infeasible_skipped: int = 0
    stopped_early: bool = False
    diverged: bool = False


def _write_log(out_dir, rows):
    if out_dir is None:
        return
    path = Path(out_dir) / "train_log.csv"
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "lr", "train_loss", "valid_loss"])
        writer.writeheader()
        writer.writerows(rows)


class _Loop:
    """Shared optimization loop with validation tracking and resume."""

    def __init__(self, stage: str, cfg: RunConfig, stage_cfg: StageSection,
                 params: dict[str, Tensor], seed: int):
        self.stage = stage
        self.cfg = cfg
        self.stage_cfg = stage_cfg
        self.names = sorted(params)
        self.params = [params[n] for n in self.names]
        self.seed = seed
        self.schedule = LrSchedule(
            peak_lr=stage_cfg.peak_lr, final_lr=stage_cfg.final_lr,
            warmup_steps=stage_cfg.warmup_steps, total_steps=stage_cfg.total_steps)
        self.adam = AdamState()
        self.step = 0
        self.best_valid = math.inf
        self.best_tensors: dict[str, np.ndarray] | None = None
        self.evals_since_best = 0
        self.rows: list[dict] = []
        self.infeasible = 0

    def state_tensors(self, model_tensors: dict[str, np.ndarray]) -> dict:
        self.adam.ensure(self.params)
        out = dict(model_tensors)
        for n, m, v in zip(self.names, self.adam.m, self.adam.v):
            out["adam.m." + n] = m
            out["adam.v." + n] = v
        if self.best_tensors is not None:
            out.update({"best." + k: v for k, v in self.best_tensors.items()})
        return out

    def restore(self, ckpt: ModelCheckpoint):
        meta = ckpt.metadata["train_state"]
        if meta["stage"] != self.stage:
            raise ValueError(f"state is for stage {meta['stage']!r}, not {self.stage!r}")
        self.step = meta["step"]
        self.adam.step = meta["adam_step"]
        self.best_valid = meta["best_valid"]
        self.evals_since_best = meta["evals_since_best"]
        self.rows = meta["log"]
        self.infeasible = meta["infeasible"]
        self.adam.ensure(self.params)
        for i, n in enumerate(self.names):
            self.adam.m[i][...] = ckpt.tensors["adam.m." + n]
            self.adam.v[i][...] = ckpt.tensors["adam.v." + n]
        best = ckpt.namespace("best.")
        if best:
            self.best_tensors = best

    def state_meta(self) -> dict:
        return {"stage": self.stage, "step": self.step,
                "adam_step": self.adam.step, "best_valid": self.best_valid,
                "evals_since_best": self.evals_since_best, "log": self.rows,
                "infeasible": self.infeasible}

    def run(self, batch_loss_fn, valid_fn, model_tensors_fn,
            save_state_fn=None, stop_fn=None) -> bool:
        """Returns True if the run diverged."""
        tcfg = self.cfg.training
        max_steps = self.stage_cfg.max_steps
        while self.step < max_steps:
            self.step += 1
            lr = schedule_lr(self.schedule, self.step)
            rng = generator(self.seed, self.stage, "step", self.step)
            for p in self.params:
                p.grad = None
            loss = batch_loss_fn(rng)
            if loss is None:
                self.infeasible += 1
                continue
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                return True
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in self.params]
            clip_grad_norm(grads, tcfg.grad_clip)
            try:
                adam_step(self.params, grads, self.adam, lr)
            except NonFiniteGradientError:
                self.infeasible += 1
                continue
            if self.step % tcfg.eval_interval == 0 or self.step == max_steps:
                valid = valid_fn()
                self.rows.append({"step": self.step, "lr": lr,
                                  "train_loss": loss_val, "valid_loss": valid})
                if valid < self.best_valid:
                    self.best_valid = valid
                    self.best_tensors = {k: v.copy()
                                         for k, v in model_tensors_fn().items()}
                    self.evals_since_best = 0
                else:
                    self.evals_since_best += 1
                if save_state_fn is not None:
                    save_state_fn(self)
                if stop_fn is not None and stop_fn():
                    break
                if self.evals_since_best >= tcfg.early_stop_evals:
                    break
        if self.best_tensors is None:
            self.best_valid = float("nan")
            self.best_tensors = {k: v.copy() for k, v in model_tensors_fn().items()}
        return False


def _ctc_targets(tokenizer: CharTokenizer, text: str) -> list[int]:
    return tokenizer.encode_ctc(text)


def pretrain_encoder(entries: list[ManifestEntry], cfg: RunConfig,
                     out_dir=None, state_path=None, resume: bool = False,
                     stop_fn=None) -> TrainResult:
    """Stage 1: train encoder + CTC head; returns the best-validation model."""
    tcfg = cfg.training
    utts = prepare_corpus(entries)
    tokenizer = CharTokenizer.from_texts([e.text for e in entries])
    train_idx, valid_idx = split_indices(len(utts), tcfg.valid_fraction, tcfg.seed)
    train_utts = [utts[i] for i in train_idx]
    valid_utts = [utts[i] for i in valid_idx] or train_utts
    normalizer = frontend.FeatureNormalizer.fit([u.raw_frames for u in train_utts])
    hours = hours_by_language(train_utts)

    encoder = ConformerEncoder(encoder_config(cfg, tokenizer.ctc_vocab_size),
                               seed=tcfg.seed)
    params = {"encoder." + k: v for k, v in encoder.params.items()}
    loop = _Loop("ctc_pretrain", cfg, tcfg.pretrain, params, tcfg.seed)

    def model_tensors():
        out = {"encoder." + k: v.data for k, v in encoder.params.items()}
        out["frontend.mel_mean"] = normalizer.mean
        out["frontend.mel_std"] = normalizer.std
        return out

    def utt_loss(u: PreparedUtterance, train: bool, rng=None):
        feats = u.features(normalizer if cfg.frontend.normalize else None)
        _, log_probs = encoder.encode(feats, train=train, rng=rng)
        return ctc.ctc_loss(log_probs, _ctc_targets(tokenizer, u.entry.text))

    def batch_loss(rng):
        batch = sample_batch(train_utts, hours, tcfg.sampling_alpha,
                             tcfg.batch_seconds, rng)
        losses = [l for l in (utt_loss(u, True, rng) for u in batch)
                  if math.isfinite(l.item())]
        if not losses:
            return None
        total = losses[0]
        for l in losses[1:]:
            total = total + l
        return total * (1.0 / len(losses))

    def valid_loss():
        with no_grad():
            vals = [utt_loss(u, False).item() for u in valid_utts]
        vals = [v for v in vals if math.isfinite(v)]
        return float(np.mean(vals)) if vals else math.inf

    def make_checkpoint(tensors) -> ModelCheckpoint:
        return ModelCheckpoint(
            config=cfg.to_dict(), tensors=dict(tensors),
            metadata={"tokenizer": tokenizer.to_dict(), "stage": "ctc_pretrain"})

    if resume and state_path is not None and Path(state_path).exists():
        state = load_checkpoint(state_path)
        loop.restore(state)
        for k, v in state.tensors.items():
            if k.startswith("encoder."):
                encoder.params[k[len("encoder."):]].data = v.astype(
                    encoder.params[k[len("encoder."):]].data.dtype)

    def save_state(lp: _Loop):
        if state_path is None:
            return
        state = ModelCheckpoint(config=cfg.to_dict(),
                                tensors=lp.state_tensors(model_tensors()),
                                metadata={"tokenizer": tokenizer.to_dict(),
                                          "train_state": lp.state_meta()})
        save_checkpoint(state_path, state)

    diverged = loop.run(batch_loss, valid_loss, model_tensors, save_state, stop_fn)
    _write_log(out_dir, loop.rows)
    ckpt = make_checkpoint(loop.best_tensors)
    return TrainResult(checkpoint=ckpt, log=loop.rows, best_valid=loop.best_valid,
                       steps=loop.step, infeasible_skipped=loop.infeasible,
                       stopped_early=loop.evals_since_best >= tcfg.early_stop_evals,
                       diverged=diverged)


def train_joint(entries: list[ManifestEntry], cfg: RunConfig,
                encoder_ckpt: ModelCheckpoint, out_dir=None, state_path=None,
                resume: bool = False, stop_fn=None) -> TrainResult:
    """Stage 2: joint training of encoder + bridge + LoRA with text masking."""
    tcfg = cfg.training
    utts = prepare_corpus(entries)
    tokenizer = CharTokenizer.from_dict(encoder_ckpt.metadata["tokenizer"])
    train_idx, valid_idx = split_indices(len(utts), tcfg.valid_fraction, tcfg.seed)
    train_utts = [utts[i] for i in train_idx]
    valid_utts = [utts[i] for i in valid_idx] or train_utts
    hours = hours_by_language(train_utts)

    system = AsrSystem.from_encoder_checkpoint(cfg, encoder_ckpt, seed=tcfg.seed)
    normalizer = system.normalizer if cfg.frontend.normalize else None

    params = system.joint_trainable()
    loop = _Loop("joint", cfg, tcfg.joint, params, tcfg.seed)

    def model_tensors():
        return system.all_tensors()

    def utt_loss(u: PreparedUtterance, train: bool, rng=None):
        feats = u.features(normalizer)
        target_ids = tokenizer.encode(u.entry.text)
        inputs = target_ids
        if train and tcfg.mask_fraction > 0 and rng is not None:
            inputs = mask_tokens(target_ids, tcfg.mask_fraction, rng)
            assert tokenizer.encode(u.entry.text) == target_ids  # targets untouched
        return system.joint_loss(feats, u.entry.text, input_text_ids=inputs,
                                 train=train, rng=rng)

    def batch_loss(rng):
        batch = sample_batch(train_utts, hours, tcfg.sampling_alpha,
                             tcfg.batch_seconds, rng)
        total = None
        for u in batch:
            l = utt_loss(u, True, rng)
            total = l if total is None else total + l
        return total * (1.0 / len(batch))

    def valid_loss():
        with no_grad():
            return float(np.mean([utt_loss(u, False).item() for u in valid_utts]))

    if resume and state_path is not None and Path(state_path).exists():
        state = load_checkpoint(state_path)
        loop.restore(state)
        system.load_tensors({k: v for k, v in state.tensors.items()
                             if not (k.startswith(("adam.", "best.")))},
                            require_all=False)

    def save_state(lp: _Loop):
        if state_path is None:
            return
        state = ModelCheckpoint(config=cfg.to_dict(),
                                tensors=lp.state_tensors(model_tensors()),
                                metadata={"tokenizer": tokenizer.to_dict(),
                                          "train_state": lp.state_meta()})
        save_checkpoint(state_path, state)

    diverged = loop.run(batch_loss, valid_loss, model_tensors, save_state, stop_fn)
    _write_log(out_dir, loop.rows)
    system.load_tensors(loop.best_tensors, require_all=False)
    ckpt = system.to_checkpoint({"stage": "joint"})
    return TrainResult(checkpoint=ckpt, log=loop.rows, best_valid=loop.best_valid,
                       steps=loop.step, infeasible_skipped=loop.infeasible,
                       stopped_early=loop.evals_since_best >= tcfg.early_stop_evals,
                       diverged=diverged)
