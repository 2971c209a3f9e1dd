"""Command-line surface: pretrain, train, transcribe, eval, align,
inspect-ckpt.

Exit codes: 0 success, 1 internal error, 2 bad input (arguments, config,
manifest), 3 bad data file (unreadable audio or checkpoint).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evalsuite, frontend, trainer
from .checkpoint import (CheckpointError, config_digest, file_digest,
                         load_checkpoint, save_checkpoint)
from .config import ConfigError, load_config
from .system import AsrSystem

log = logging.getLogger("prefixasr")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_BAD_DATA = 3


class InputError(ValueError):
    """Bad arguments, config, or manifest (exit code 2)."""


def _load_run_config(args):
    if args.config is not None and not Path(args.config).exists():
        raise InputError(f"config not found: {args.config}")
    cfg = load_config(args.config, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.training.seed = args.seed
    return cfg


def _read_manifest(args):
    if not Path(args.manifest).exists():
        raise InputError(f"manifest not found: {args.manifest}")
    try:
        return trainer.read_manifest(args.manifest)
    except trainer.ManifestError as exc:
        raise InputError(str(exc)) from exc


def _load_ckpt(path):
    if not Path(path).exists():
        raise InputError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _out_dir(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_model_summary(cfg):
    rate_ms = 10.0 * cfg.encoder.subsample_stride * cfg.bridge.stack_n
    log.info("audio embedding rate: %.0f ms per embedding", rate_ms)
    d = cfg.lm.d_llm
    lora_params = cfg.lora.rank * (d + d) * 4 * cfg.lm.num_layers
    log.info("trainable LM parameters (adapters): %d", lora_params)


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    entries = _read_manifest(args)
    out = _out_dir(args)
    state_path = out / "pretrain_state.ckpt"
    result = trainer.pretrain_encoder(entries, cfg, out_dir=out,
                                      state_path=state_path, resume=args.resume)
    if result.diverged:
        log.warning("training diverged; keeping last good checkpoint")
    ckpt_path = out / "encoder.ckpt"
    save_checkpoint(ckpt_path, result.checkpoint)
    log.info("steps: %d  best validation loss: %.4f", result.steps, result.best_valid)
    log.info("wrote %s (digest %s)", ckpt_path, file_digest(ckpt_path)[:12])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    encoder_ckpt = _load_ckpt(args.ckpt)
    if encoder_ckpt.digest != config_digest(cfg.to_dict()):
        raise CheckpointError(
            f"{args.ckpt}: config digest mismatch — the encoder checkpoint was "
            "trained under a different configuration")
    entries = _read_manifest(args)
    out = _out_dir(args)
    _log_model_summary(cfg)
    state_path = out / "train_state.ckpt"
    result = trainer.train_joint(entries, cfg, encoder_ckpt, out_dir=out,
                                 state_path=state_path, resume=args.resume)
    if result.diverged:
        log.warning("training diverged; keeping last good checkpoint")
    ckpt_path = out / "model.ckpt"
    save_checkpoint(ckpt_path, result.checkpoint)
    log.info("steps: %d  best validation loss: %.4f", result.steps, result.best_valid)
    log.info("wrote %s (digest %s)", ckpt_path, file_digest(ckpt_path)[:12])
    return EXIT_OK


def cmd_transcribe(args) -> int:
    system = AsrSystem.from_checkpoint(_load_ckpt(args.ckpt))
    if not Path(args.audio).exists():
        raise InputError(f"audio file not found: {args.audio}")
    wav = frontend.load_audio(args.audio)
    feats = frontend.log_mel(wav, system.normalizer)
    print(system.transcribe(feats))
    return EXIT_OK


def cmd_eval(args) -> int:
    system = AsrSystem.from_checkpoint(_load_ckpt(args.ckpt))
    if args.config is not None:
        cfg = _load_run_config(args)
        if config_digest(cfg.to_dict()) != config_digest(system.cfg.to_dict()):
            raise CheckpointError(
                f"{args.ckpt}: config digest mismatch with --config")
    entries = _read_manifest(args)
    report = evalsuite.eval_corpus(system, entries)
    out = _out_dir(args)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_table())
    print(report.to_table(), end="")
    if report.skipped:
        log.warning("skipped %d unreadable utterances", len(report.skipped))
    return EXIT_OK


def cmd_align(args) -> int:
    system = AsrSystem.from_checkpoint(_load_ckpt(args.ckpt))
    entries = _read_manifest(args)
    if not 0 <= args.index < len(entries):
        raise InputError(f"--index {args.index} outside manifest of {len(entries)}")
    e = entries[args.index]
    wav = frontend.load_audio(e.audio_path)
    feats = frontend.log_mel(wav, system.normalizer)
    matrix = evalsuite.alignment_matrix(system, feats, e.text,
                                        utterance_id=f"utt{args.index}")
    out = _out_dir(args)
    csv_path, pgm_path = evalsuite.export_heatmap(matrix, out / f"align_{args.index:04d}")
    mono = evalsuite.argmax_monotonicity(matrix.values)
    log.info("alignment %dx%d, stride %.0f ms, argmax monotonicity %.2f",
             matrix.values.shape[0], matrix.values.shape[1],
             matrix.stride_ms, mono)
    print(csv_path)
    print(pgm_path)
    return EXIT_OK


def cmd_inspect_ckpt(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    print(f"config digest: {ckpt.digest}")
    print(f"file digest:   {file_digest(args.ckpt)}")
    for key in ("stage", "merged_lora"):
        if key in ckpt.metadata:
            print(f"{key}: {ckpt.metadata[key]}")
    total = 0
    for name in sorted(ckpt.tensors):
        arr = ckpt.tensors[name]
        total += arr.size
        print(f"  {name}  {arr.dtype}  {tuple(arr.shape)}")
    print(f"total parameters: {total}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixasr",
        description="Speech recognition via audio-embedding-prefixed language modeling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, manifest=False, ckpt=False, seed=False):
        if config:
            p.add_argument("--config", help="YAML run configuration")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="dotted config override, highest precedence")
        if manifest:
            p.add_argument("--manifest", required=True, help="JSONL utterance manifest")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint file")
        if seed:
            p.add_argument("--seed", type=int, help="override training seed")
        p.add_argument("--out-dir", help="output directory (default: cwd)")

    p = sub.add_parser("pretrain", help="stage 1: CTC-pretrain the encoder")
    common(p, config=True, manifest=True, seed=True)
    p.add_argument("--resume", action="store_true",
                   help="continue from the saved training state in --out-dir")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="stage 2: joint training from an encoder checkpoint")
    common(p, config=True, manifest=True, ckpt=True, seed=True)
    p.add_argument("--resume", action="store_true",
                   help="continue from the saved training state in --out-dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("transcribe", help="greedy-decode one audio file")
    common(p, ckpt=True)
    p.add_argument("audio", help="wav file (PCM16, up to 20 s)")
    p.set_defaults(fn=cmd_transcribe)

    p = sub.add_parser("eval", help="per-language WER report over a manifest")
    common(p, config=True, manifest=True, ckpt=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("align", help="export an audio/text alignment heatmap")
    common(p, manifest=True, ckpt=True)
    p.add_argument("--index", type=int, required=True,
                   help="utterance index within the manifest")
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("inspect-ckpt", help="print checkpoint digests and tensors")
    common(p, ckpt=True)
    p.set_defaults(fn=cmd_inspect_ckpt)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_BAD_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (InputError, ConfigError, trainer.ManifestError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT
    except (frontend.AudioError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_DATA
    except Exception:  # pragma: no cover - defensive
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
