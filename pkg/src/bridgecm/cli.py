"""Operator entry point: corpus, train, enhance, eval, verify subcommands.

Exit codes: 0 success, 1 failed verification or evaluation gate, 2 bad
config or unusable inputs, 3 missing/corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import verify as verify_mod
from .config import ConfigError, load_config
from .data import DataError, Manifest, load_spectrogram_pairs
from .metrics import EvalRow, MetricError, seg_snr, si_sdr, write_eval_csv
from .model import CheckpointError, init_model, load_checkpoint
from .sampler import SamplerError, enhance_file, enhance_waveform
from .spectral import SpectralConfig, SpectralError, read_wav
from .training import Trainer, TrainingDiverged

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_BAD_CHECKPOINT = 3


def _model_init_seed(train_seed: int) -> int:
    return int(np.random.SeedSequence([train_seed, 0]).generate_state(1)[0])


def cmd_corpus(args) -> int:
    cfg = load_config(args.config)
    data_cfg = cfg.data
    if args.seed is not None:
        data_cfg = replace(data_cfg, seed=args.seed)
    if args.out is not None:
        data_cfg = replace(data_cfg, out_dir=args.out)
    _, manifest_path = data_mod.build_corpus(data_cfg)
    print(manifest_path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.max_steps is not None:
        train_cfg = replace(train_cfg, max_steps=args.max_steps)

    manifest_path = args.manifest or str(Path(cfg.data.out_dir) / "manifest.jsonl")
    try:
        manifest = Manifest.load(manifest_path)
    except OSError as e:
        print(f"error: cannot read manifest: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    entries = manifest.split("train")
    if not entries:
        print(f"error: no training entries in {manifest_path}", file=sys.stderr)
        return EXIT_BAD_INPUT
    pairs = [
        (torch.from_numpy(x).float(), torch.from_numpy(y).float())
        for x, y in load_spectrogram_pairs(entries, cfg.spectral)
    ]

    run_dir = Path(args.run_dir)
    ckpt_dir = run_dir / "checkpoints"
    run_dir.mkdir(parents=True, exist_ok=True)
    meta_extra = {"spectral": cfg.to_dict()["spectral"]}

    if args.resume:
        trainer = Trainer.restore(
            args.resume, pairs,
            log_path=run_dir / "train_log.jsonl",
            checkpoint_dir=ckpt_dir,
            config=train_cfg,
        )
        trainer.meta_extra = meta_extra
    else:
        model = init_model(cfg.model, seed=_model_init_seed(train_cfg.seed))
        trainer = Trainer(
            model, cfg.bridge, train_cfg, pairs,
            log_path=run_dir / "train_log.jsonl",
            checkpoint_dir=ckpt_dir,
            meta_extra=meta_extra,
        )

    trainer.run()
    final = ckpt_dir / f"step_{trainer.k:06d}.ckpt"
    if not final.exists():
        trainer.save(final)
    print(final)
    return EXIT_OK


def _spectral_from_checkpoint(meta: dict) -> SpectralConfig:
    stored = meta.get("extra", {}).get("spectral")
    return SpectralConfig(**stored) if stored else SpectralConfig()


def cmd_enhance(args) -> int:
    model, ema_model, meta, _ = load_checkpoint(args.checkpoint)
    chosen = model if args.weights == "online" else ema_model
    chosen.eval()
    spectral_cfg = _spectral_from_checkpoint(meta)

    inputs: list[Path] = []
    for item in args.inputs:
        p = Path(item)
        if p.is_dir():
            inputs.extend(sorted(p.glob("*.wav")))
        else:
            inputs.append(p)
    if not inputs:
        print("error: no input WAV files", file=sys.stderr)
        return EXIT_BAD_INPUT

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rtfs = []
    for p in inputs:
        result = enhance_file(chosen, p, out_dir / p.name, spectral_cfg)
        rtfs.append(result.rtf)
        print(out_dir / p.name)
    if len(inputs) > 1:
        print(
            f"RTF mean {float(np.mean(rtfs)):.4f} "
            f"+/- {float(np.std(rtfs)):.4f} over {len(inputs)} files"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    model, ema_model, meta, _ = load_checkpoint(args.checkpoint)
    chosen = model if args.weights == "online" else ema_model
    chosen.eval()
    spectral_cfg = _spectral_from_checkpoint(meta)

    try:
        manifest = Manifest.load(args.manifest)
    except OSError as e:
        print(f"error: cannot read manifest: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    entries = manifest.split(args.split)
    if not entries:
        print(f"error: manifest has no {args.split!r} entries", file=sys.stderr)
        return EXIT_BAD_INPUT

    rows = []
    for e in entries:
        clean = read_wav(e.clean_path)
        noisy = read_wav(e.noisy_path)
        result = enhance_waveform(chosen, noisy, spectral_cfg)
        enhanced = result.waveform.samples
        rows.append(
            EvalRow(
                file=e.noisy_path,
                snr_db=e.snr_db,
                si_sdr_noisy=si_sdr(clean.samples, noisy.samples),
                si_sdr_enhanced=si_sdr(clean.samples, enhanced),
                seg_snr_noisy=seg_snr(clean.samples, noisy.samples),
                seg_snr_enhanced=seg_snr(clean.samples, enhanced),
                rtf=result.rtf,
            )
        )
    means = write_eval_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} files)")
    print(
        f"SI-SDR noisy {means['si_sdr_noisy']:.2f} dB -> "
        f"enhanced {means['si_sdr_enhanced']:.2f} dB; "
        f"seg SNR {means['seg_snr_noisy']:.2f} -> {means['seg_snr_enhanced']:.2f} dB; "
        f"RTF {means['rtf']:.4f}"
    )
    if means["si_sdr_enhanced"] < means["si_sdr_noisy"]:
        print("error: enhancement did not improve mean SI-SDR", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify_mod.run_suite(args.suite, seed=args.seed, csv_dir=args.csv_dir)
    print(verify_mod.format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgecm",
        description=(
            "Consistency-model speech enhancement over a Brownian bridge: "
            "corpus generation, training, one-step enhancement, evaluation, "
            "and numerical verification."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="generate the synthetic corpus")
    p.add_argument("--config", required=True, help="YAML run config")
    p.add_argument("--seed", type=int, default=None, help="override data.seed")
    p.add_argument("--out", default=None, help="override data.out_dir")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="run the consistency training loop")
    p.add_argument("--config", required=True, help="YAML run config")
    p.add_argument("--manifest", default=None, help="corpus manifest (default: data.out_dir/manifest.jsonl)")
    p.add_argument("--run-dir", default="runs/train", help="logs and checkpoints go here")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--max-steps", type=int, default=None, help="override train.max_steps")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="one-step enhancement of WAV files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--weights", choices=("ema", "online"), default="ema")
    p.add_argument("inputs", nargs="+", help="WAV files or directories")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="metric report over a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="eval_report.csv")
    p.add_argument("--weights", choices=("ema", "online"), default="ema")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run a numerical verification suite")
    p.add_argument("suite", choices=verify_mod.SUITES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv-dir", default=None)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except (ConfigError, DataError, SpectralError, MetricError, SamplerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (OSError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
