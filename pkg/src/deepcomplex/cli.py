"""Command-line entry point: mask, simulate, train, reconstruct, evaluate, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .datasim import make_dataset, read_dataset, write_dataset
from .errors import DeepComplexError, FileFormatError, MaskError, ShapeError
from .metrics import combine_magnitude
from .network import CascadeModel, ModelConfig, load_checkpoint, save_checkpoint
from .sampling import MaskKind, make_mask, read_mask, write_mask
from .training import (LossLog, TrainConfig, ablation_curves_csv, ablation_report_csv, ablation_run,
                       evaluate, reconstruct, train)

log = logging.getLogger("deepcomplex")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    """Bad user input: flags, config files or missing inputs."""


_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _parse_value(key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str) -> tuple[dict, dict]:
    """Split flat ``key = value`` text into model and training keyword dicts."""
    model, training = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _MODEL_KEYS:
            model[key] = _parse_value(key, raw, _MODEL_KEYS[key])
        elif key in _TRAIN_KEYS:
            training[key] = _parse_value(key, raw, _TRAIN_KEYS[key])
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    return model, training


def load_config(path: str | None, ncoil: int) -> tuple[ModelConfig, TrainConfig]:
    model_kw, train_kw = parse_config(_read_text(path)) if path else ({}, {})
    model_kw.setdefault("ncoil", ncoil)
    if model_kw["ncoil"] != ncoil:
        raise ConfigError(f"config ncoil={model_kw['ncoil']} but dataset has {ncoil} coils")
    try:
        return ModelConfig(**model_kw), TrainConfig(**train_kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _read_text(path) -> str:
    if not Path(path).is_file():
        raise ConfigError(f"no such file: {path}")
    return Path(path).read_text()


def _require(path) -> Path:
    if not Path(path).is_file():
        raise ConfigError(f"no such file: {path}")
    return Path(path)


def _dataset(path):
    samples = read_dataset(_require(path))
    if not samples:
        raise ConfigError(f"{path} holds no samples")
    return samples


# ---------------------------------------------------------------------------
# commands

def cmd_mask(args) -> int:
    mask = make_mask(args.kind, args.height, args.width, rate=args.rate, accel=args.accel,
                     acs=args.acs, seed=args.seed)
    write_mask(mask, args.out)
    print(f"{mask.kind.value} {args.height}x{args.width} rate {mask.rate:.4f} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.nsamples < 1 or args.ncoil < 1:
        raise ConfigError("nsamples and ncoil must be >= 1")
    mask = read_mask(_require(args.mask))
    samples = make_dataset(args.nsamples, args.ncoil, mask, seed=args.seed, noise_std=args.noise_std)
    write_dataset(samples, args.out)
    print(f"{args.nsamples} samples, {args.ncoil} coils, {mask.shape[0]}x{mask.shape[1]} -> {args.out}")
    return EXIT_OK


def _loss_log_path(args) -> Path:
    return Path(args.loss_log) if args.loss_log else Path(args.out).with_suffix(".loss.csv")


def cmd_train(args) -> int:
    samples = _dataset(args.dataset)
    model_cfg, train_cfg = load_config(args.config, samples[0].shape[0])
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    log_path = _loss_log_path(args)
    loss_log = LossLog()
    if args.resume:
        model = load_checkpoint(_require(args.resume), train_cfg.lambda_dc)
        if model.config != model_cfg:
            raise ConfigError(f"checkpoint architecture {model.config} differs from config {model_cfg}")
        resume_log = Path(args.resume_log) if args.resume_log else Path(args.resume).with_suffix(".loss.csv")
        if resume_log.is_file():
            loss_log = LossLog.read(resume_log)
    else:
        model = CascadeModel(model_cfg, train_cfg.lambda_dc, seed=train_cfg.seed)

    def report(epoch, tr, va):
        print(f"epoch {epoch} train {tr:.6g} val {va:.6g}", flush=True)

    result = train(model, samples, train_cfg, loss_log, on_epoch=report)
    save_checkpoint(result.model, args.out)
    result.log.write(log_path)
    print(f"best epoch {result.best_epoch}; checkpoint -> {args.out}; loss log -> {log_path}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    model = load_checkpoint(_require(args.checkpoint), args.lam)
    samples = _dataset(args.dataset)
    if samples[0].shape[0] != model.config.ncoil:
        raise ConfigError(f"checkpoint expects {model.config.ncoil} coils, dataset has {samples[0].shape[0]}")
    recons = np.stack(reconstruct(model, samples))
    magnitude = np.stack([combine_magnitude(r, args.combine) for r in recons])
    np.savez(args.out, complex=recons, magnitude=magnitude)
    print(f"{len(samples)} reconstructions {recons.shape[1:]} -> {args.out}")
    return EXIT_OK


def _eval_csv(rows) -> str:
    lines = ["sample,psnr_zf,psnr_recon,ssim_zf,ssim_recon"]
    lines += [f"{r.sample_id},{r.psnr_zf!r},{r.psnr_recon!r},{r.ssim_zf!r},{r.ssim_recon!r}" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    samples = _dataset(args.dataset)
    with np.load(_require(args.recon)) as z:
        if "complex" not in z:
            raise ConfigError(f"{args.recon} has no 'complex' array")
        recons = list(z["complex"])
    try:
        rows = evaluate(samples, recons, args.combine)
    except ShapeError as e:
        raise ConfigError(str(e)) from None
    text = _eval_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    train_set = _dataset(args.train_set)
    test_set = _dataset(args.test_set)
    model_cfg, train_cfg = load_config(args.config, train_set[0].shape[0])
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    rows = ablation_run(model_cfg, train_cfg, train_set, test_set, args.combine)
    Path(args.out).write_text(ablation_report_csv(rows))
    curves = Path(args.curves) if args.curves else Path(args.out).with_suffix(".curves.csv")
    curves.write_text(ablation_curves_csv(rows))
    sys.stdout.write(ablation_report_csv(rows))
    return EXIT_OK


def _lam(text: str) -> float:
    value = float(text)
    if value < 0 or math.isnan(value):
        raise argparse.ArgumentTypeError("lambda must be nonnegative (use inf for hard consistency)")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepcomplex", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS/FFT threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mask", help="generate an undersampling mask (MSK1)")
    m.add_argument("--kind", required=True, choices=[k.value for k in MaskKind if k is not MaskKind.CUSTOM])
    m.add_argument("--height", "-H", type=int, default=64)
    m.add_argument("--width", "-W", type=int, default=64)
    m.add_argument("--rate", type=float)
    m.add_argument("--accel", type=int)
    m.add_argument("--acs", type=int, default=0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)

    s = sub.add_parser("simulate", help="simulate a multi-coil phantom dataset (CKS1)")
    s.add_argument("--nsamples", type=int, default=20)
    s.add_argument("--ncoil", type=int, default=4)
    s.add_argument("--mask", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a cascade and write a checkpoint plus loss log")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--loss-log", help="default: <out>.loss.csv")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--resume-log", help="loss log of the resumed run (default: <resume>.loss.csv)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", help="run a checkpoint over a dataset, write .npz")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--lambda", dest="lam", type=_lam, default=math.inf)
    r.add_argument("--combine", choices=("walsh", "sos"), default="walsh")
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="PSNR/SSIM per sample as CSV")
    e.add_argument("--dataset", required=True)
    e.add_argument("--recon", required=True)
    e.add_argument("--out")
    e.add_argument("--combine", choices=("walsh", "sos"), default="walsh")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="complex vs parameter-matched real convolution")
    a.add_argument("--train-set", required=True)
    a.add_argument("--test-set", required=True)
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--curves", help="default: <out>.curves.csv")
    a.add_argument("--seed", type=int)
    a.add_argument("--combine", choices=("walsh", "sos"), default="walsh")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except (ConfigError, FileFormatError, MaskError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DeepComplexError, ArithmeticError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
