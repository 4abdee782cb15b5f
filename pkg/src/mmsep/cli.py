"""Command-line entry point.

Subcommands: train, separate, evaluate, sweep, gen-corpus, validate.
Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
abort.  The environment variable VF_SEED overrides the configured seed,
and --deterministic forces single-worker ordered execution.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import datagen
from .audio import Waveform, read_wav, write_wav
from .checkpoint import load_checkpoint
from .conditioning import load_precomputed_features
from .datagen import (
    inject_av_offset,
    load_manifest,
    make_mixture,
    noise_track,
    normalize_track,
    random_crop,
)
from .errors import ConfigError, DataError, NumericsError
from .evaluation import EvalOptions, evaluate, sweep, write_report_csv, write_sweep_csv
from .fusion import TransformerConfig
from .model import ModelConfig, SeparationModel
from .training import TrainConfig, train
from .unet import UNetConfig

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _take(section, name, known):
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key [{name}] {sorted(unknown)[0]!r}")
    return {k: section[k] for k in section}


def load_config(path):
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    top_unknown = set(raw) - {"model", "train", "data"}
    if top_unknown:
        raise ConfigError(f"unknown config section {sorted(top_unknown)[0]!r}")
    model_raw = dict(raw.get("model", {}))
    unet_raw = _take(model_raw.pop("unet", {}), "model.unet",
                     UNetConfig.__dataclass_fields__)
    tf_raw = _take(model_raw.pop("transformer", {}), "model.transformer",
                   TransformerConfig.__dataclass_fields__)
    model_raw = _take(model_raw, "model",
                      ["modalities", "bottleneck", "sample_rate", "fps", "dtype", "seed"])
    unet_cfg = UNetConfig(**unet_raw)
    tf_cfg = None
    if tf_raw:
        tf_raw.setdefault("d_model", unet_cfg.bottleneck_channels)
        tf_cfg = TransformerConfig(**tf_raw)
    model_cfg = ModelConfig(unet=unet_cfg, transformer=tf_cfg, **model_raw)
    train_raw = _take(raw.get("train", {}), "train", TrainConfig.__dataclass_fields__)
    if "curriculum" in train_raw:
        train_raw["curriculum"] = tuple(
            (stage, int(n)) for stage, n in train_raw["curriculum"]
        )
    train_cfg = TrainConfig(**train_raw)
    data_raw = _take(raw.get("data", {}), "data",
                     ["manifest", "crop_seconds", "offset_augment_ms", "eval_sdr_taps"])
    return model_cfg, train_cfg, data_raw


def _apply_seed_override(train_cfg):
    seed = os.environ.get("VF_SEED")
    if seed is not None:
        train_cfg.seed = int(seed)
    return train_cfg


def write_run_manifest(out_dir, args, config_path, seed):
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": " ".join(sys.argv[1:]),
        "seed": seed,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if config_path:
        with open(config_path, "rb") as f:
            blob = f.read()
        record["config_sha256"] = hashlib.sha256(blob).hexdigest()
        shutil.copy(config_path, os.path.join(out_dir, "config.toml"))
        record["config"] = "config.toml"
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(record, f, indent=2)


# ---------------------------------------------------------------------------
# dataset assembly from a manifest
# ---------------------------------------------------------------------------

def _load_entry_tracks(entry, model_cfg):
    w = read_wav(entry.audio)
    track = normalize_track(w.samples)
    feats = None
    if "video" in model_cfg.modalities:
        if entry.features is None:
            raise DataError(f"{entry.audio}: manifest entry lacks video features")
        feats = load_precomputed_features(
            entry.features, expected_c=model_cfg.unet.bottleneck_channels
        )
    return track, feats


def build_samples(entries, model_cfg, stage, rng, crop_seconds=0.0, offset_ms=0.0):
    """Pair manifest entries into mixtures for one pass over the data.

    Separation mixes entry i with a randomly chosen other entry;
    denoising mixes with synthetic background noise.  Optional random
    cropping and audio-visual offset augmentation follow the sample
    construction.
    """
    order = rng.permutation(len(entries))
    samples = []
    for pos, i in enumerate(order):
        entry = entries[i]
        try:
            target, feats = _load_entry_tracks(entry, model_cfg)
            if stage == "denoising":
                interferer = normalize_track(
                    noise_track(len(target) / model_cfg.sample_rate,
                                model_cfg.sample_rate,
                                seed=int(rng.integers(0, 2**31))).samples
                )
                kind = "noise"
            else:
                j = int(order[(pos + 1) % len(order)])
                if j == i:
                    continue
                interferer, _ = _load_entry_tracks(entries[j], model_cfg)
                kind = "speech"
            sample = make_mixture(
                target, interferer, kind=kind,
                sample_id=f"{os.path.basename(entry.audio)}:{pos}", rng=rng,
                sample_rate=model_cfg.sample_rate,
                features=feats, fps=model_cfg.fps,
                transcript=entry.text if "text" in model_cfg.modalities else None,
            )
            if crop_seconds > 0 and "text" not in model_cfg.modalities:
                cropped = random_crop(sample, crop_seconds, rng)
                if cropped is None:
                    continue
                sample = cropped
            if offset_ms:
                sample = inject_av_offset(
                    sample, float(rng.uniform(-offset_ms, offset_ms))
                )
            samples.append(sample)
        except DataError:
            continue
    return samples


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    model_cfg, train_cfg, data = load_config(args.config)
    _apply_seed_override(train_cfg)
    if args.seed is not None:
        train_cfg.seed = args.seed
    entries = load_manifest(data["manifest"]
                            if os.path.isabs(data["manifest"])
                            else os.path.join(os.path.dirname(args.config),
                                              data["manifest"]))
    train_entries = [e for e in entries if e.split == "train"]
    if not train_entries:
        raise DataError("manifest has no train-split entries")
    write_run_manifest(args.out, args, args.config, train_cfg.seed)
    model = SeparationModel(model_cfg)
    crop = float(data.get("crop_seconds", 0.0))
    offset = float(data.get("offset_augment_ms", 0.0))

    def make_epoch(stage, epoch, rng):
        return build_samples(train_entries, model_cfg, stage, rng, crop, offset)

    result = train(model, make_epoch, train_cfg, out_dir=args.out,
                   resume=args.resume, log=print)
    print(f"finished: {result.steps} steps, best loss {result.best_loss:.6f}")
    return 0


def _load_model(args):
    model_cfg, _, data = load_config(args.config)
    model = SeparationModel(model_cfg)
    model.load(args.checkpoint)
    return model, model_cfg, data


def cmd_separate(args):
    model, model_cfg, _ = _load_model(args)
    mix = read_wav(args.mixture)
    feats = None
    if args.features:
        feats = load_precomputed_features(
            args.features, expected_c=model_cfg.unet.bottleneck_channels
        )
    needed = set(model_cfg.modalities) - {"audio"}
    given = {m for m, v in (("video", feats), ("text", args.text)) if v is not None}
    if needed != given:
        raise ConfigError(
            f"checkpoint expects modalities {sorted(needed)}, got {sorted(given)}: "
            "pass --features for video and --text for text"
        )
    est = model.separate(normalize_track(mix.samples), feats, args.text)
    write_wav(args.out, Waveform(est, model_cfg.sample_rate), encoding="float32")
    print(f"wrote {args.out} ({len(est)} samples)")
    return 0


def _eval_samples(args, model_cfg, data, task):
    entries = [e for e in load_manifest(args.manifest) if e.split == args.split]
    if not entries:
        raise DataError(f"manifest has no {args.split!r}-split entries")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    stage = "denoising" if task == "denoising" else "separation"
    return build_samples(entries, model_cfg, stage, rng)


def cmd_evaluate(args):
    model, model_cfg, data = _load_model(args)
    samples = _eval_samples(args, model_cfg, data, args.task)
    opts = EvalOptions(workers=1 if args.deterministic else args.workers,
                       sdr_taps=int(data.get("eval_sdr_taps", 128)), stage=args.task)
    failures = []
    reports = evaluate(model, samples, opts,
                       on_error=lambda sid, exc: failures.append((sid, str(exc))))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_report_csv(args.out, reports, stage=args.task)
    for sid, msg in failures:
        print(f"warning: {sid}: {msg}", file=sys.stderr)
    if reports:
        mean_sisdr = np.mean([r.si_sdr_db for r in reports])
        print(f"{len(reports)} samples, mean SI-SDR {mean_sisdr:.2f} dB -> {args.out}")
    return 0


def cmd_sweep(args):
    model, model_cfg, data = _load_model(args)
    samples = _eval_samples(args, model_cfg, data, "separation")
    if args.axis == "swap":
        points = args.points.split(",")
    else:
        points = [float(p) for p in args.points.split(",")]
    opts = EvalOptions(workers=1 if args.deterministic else args.workers,
                       sdr_taps=int(data.get("eval_sdr_taps", 128)))
    rows, _ = sweep(model, samples, args.axis, points, opts,
                    rng=np.random.default_rng(args.seed if args.seed is not None else 0))
    write_sweep_csv(args.out, rows)
    print(f"{len(rows)} sweep rows -> {args.out}")
    return 0


def cmd_gen_corpus(args):
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise ConfigError(f"{args.out} exists and is not empty (use --force)")
    manifest = datagen.generate_corpus(
        args.out, n_speakers=args.speakers, seconds_per_split=args.seconds,
        seed=args.seed if args.seed is not None else 0,
        feature_dim=args.feature_dim,
    )
    print(f"corpus written, manifest at {manifest}")
    return 0


def cmd_validate(args):
    errors = 0
    for path in args.paths:
        try:
            if path.endswith(".vfck"):
                params = load_checkpoint(path)
                print(f"{path}: ok ({len(params)} parameters)")
            elif path.endswith(".vffe"):
                feats = load_precomputed_features(path)
                print(f"{path}: ok ({feats.shape[0]}x{feats.shape[1]} features)")
            elif path.endswith(".jsonl"):
                entries = load_manifest(path)
                print(f"{path}: ok ({len(entries)} entries)")
            elif path.endswith(".wav"):
                w = read_wav(path)
                print(f"{path}: ok ({len(w)} samples @ {w.sample_rate} Hz)")
            else:
                raise ConfigError(f"{path}: unknown file type")
        except (DataError, ConfigError) as exc:
            print(f"{path}: INVALID: {exc}", file=sys.stderr)
            errors += 1
    return EXIT_DATA if errors else 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="mmsep",
                                     description="multi-modal speech separation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate one mixture WAV")
    p.add_argument("checkpoint")
    p.add_argument("mixture")
    p.add_argument("--config", required=True)
    p.add_argument("--features", help="precomputed visual feature file")
    p.add_argument("--text", help="transcript of the target utterance")
    p.add_argument("--out", default="estimate.wav")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="metric report over a manifest split")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--task", choices=["separation", "denoising"], default="separation")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="report.csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="robustness sweep over one axis")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True,
                   choices=["offset", "mask", "words", "swap"])
    p.add_argument("--points", required=True,
                   help="comma-separated sweep points (labels for --axis swap)")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-corpus", help="generate a synthetic desk-scale corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--seconds", type=float, default=60.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("validate", help="check checkpoint/feature/manifest/wav files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
