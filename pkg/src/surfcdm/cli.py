"""Command-line front end: gen-data, train, segment, eval, uncertainty.

Every command resolves one flat configuration (defaults < config file <
--set overrides < dedicated flags), persists the effective configuration
next to its outputs, and is reproducible from that file plus the seed.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import figures
from .config import RunConfig
from .denoiser import init_model, load_checkpoint, save_checkpoint, train
from .errors import (
    ConfigFileError,
    InvalidConfigError,
    InvalidScaleError,
    InvalidScheduleError,
    InvalidSizeError,
    InvalidSpecError,
    SurfCdmError,
    TooFewRunsError,
)
from .metrics import evaluate, uncertainty
from .polar import compute_centroid
from .sampler import sample_ensemble, segment
from .synthdata import (
    DatasetManifest,
    load_image_png,
    load_split,
    make_dataset,
    save_mask_png,
)

_USAGE_ERRORS = (
    ConfigFileError,
    InvalidConfigError,
    InvalidScaleError,
    InvalidScheduleError,
    InvalidSizeError,
    InvalidSpecError,
    TooFewRunsError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--out", type=Path, required=True, help="output directory")


def _resolve(args) -> RunConfig:
    cfg = RunConfig.build(args.config, args.set)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    elif "seed" not in cfg.explicit and "SURFCDM_SEED" in os.environ:
        raw = os.environ["SURFCDM_SEED"]
        try:
            cfg.set("seed", int(raw))
        except ValueError as exc:
            raise ConfigFileError(f"SURFCDM_SEED is not an integer: {raw!r}") from exc
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_mask(path: Path) -> np.ndarray:
    return (load_image_png(path) >= 0.5).astype(np.uint8)


def _pick_centroid(cfg: RunConfig, args, image: np.ndarray):
    """Oracle mode reads the reference mask; estimated mode returns None."""
    if str(cfg["sampler.centroid_mode"]) == "estimated":
        return None
    if args.mask is None:
        raise ConfigFileError("oracle centroid mode needs --mask (or sampler.centroid_mode = estimated)")
    return compute_centroid(_load_mask(args.mask))


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    if args.n is not None:
        cfg.set("data.n_samples", args.n)
    out = _out_dir(args)
    manifest = make_dataset(
        n_samples=int(cfg["data.n_samples"]),
        seed=int(cfg["seed"]),
        out_dir=out,
        size=cfg.size(),
        frames_per_group=int(cfg["data.frames_per_group"]),
        dropout_prob=float(cfg["data.dropout_prob"]),
    )
    cfg.save(out)
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(
        f"wrote {len(manifest.entries)} samples to {out} "
        f"(train={counts['train']} val={counts['val']} test={counts['test']})"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if args.epochs is not None:
        cfg.set("train.epochs", args.epochs)
    out = _out_dir(args)
    torch.set_num_threads(1)

    manifest = DatasetManifest.load(args.data)
    train_samples = load_split(manifest, "train")
    val_samples = load_split(manifest, "val")
    if not train_samples or not val_samples:
        raise ConfigFileError("dataset needs non-empty train and val splits")

    model = init_model(cfg.build_denoiser_config(), seed=int(cfg["seed"]))
    schedule = cfg.build_schedule()
    tc = cfg.build_training_config()
    params = cfg.build_perturbation_params()

    def log(epoch, train_loss, val_loss):
        print(f"epoch {epoch + 1}/{tc.epochs} train={train_loss:.6f} val={val_loss:.6f}")

    train(model, train_samples, val_samples, schedule, tc, params, log=log)

    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(model, ckpt)
    lines = ["kind,index,loss"]
    lines += [f"train_batch,{k},{v!r}" for k, v in enumerate(model.train_loss)]
    lines += [f"val_epoch,{k},{v!r}" for k, v in enumerate(model.val_loss)]
    (out / "loss_history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figures.save_loss_curves(model.train_loss, model.val_loss, out / "loss_curve.png")
    cfg.save(out)
    print(f"best validation loss {model.best_val_loss:.6f}; checkpoint at {ckpt}")
    return 0


def cmd_segment(args) -> int:
    cfg = _resolve(args)
    if args.centroid is not None:
        cfg.set("sampler.centroid_mode", args.centroid)
    if args.steps is not None:
        cfg.set("schedule.steps", args.steps)
    out = _out_dir(args)
    torch.set_num_threads(1)

    model = load_checkpoint(args.checkpoint)
    image = load_image_png(args.image)
    sampler_cfg = cfg.build_sampler_config()
    centroid = _pick_centroid(cfg, args, image)

    mask, trace = segment(image, model, sampler_cfg, int(cfg["seed"]), centroid)
    save_mask_png(mask, out / "prediction.png")
    figures.save_mask_overlay(image, mask, out / "overlay.png")
    if args.trace:
        figures.save_trace_strip(trace, out / "trace.png")
        rows = ["i,sigma,ussd_prev"]
        rows += [f"{r.i},{r.sigma!r},{r.ussd_prev!r}" for r in trace.records]
        (out / "trace.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    cfg.save(out)
    print(f"prediction with {int(mask.sum())} foreground pixels at {out / 'prediction.png'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    if args.steps is not None:
        cfg.set("schedule.steps", args.steps)
    out = _out_dir(args)
    torch.set_num_threads(1)

    manifest = DatasetManifest.load(args.data)
    samples = load_split(manifest, args.split)
    if not samples:
        raise ConfigFileError(f"split {args.split!r} is empty")
    model = load_checkpoint(args.checkpoint)
    sampler_cfg = cfg.build_sampler_config()

    report = evaluate(samples, model, sampler_cfg, seed=int(cfg["seed"]))
    report.save_csv(out / "metrics.csv")
    figures.save_metrics_summary(report, out / "metrics_summary.png")
    cfg.save(out)
    mean, sd = report.aggregate()
    print(
        f"{args.split}: n={len(samples)} "
        f"dsc={mean.dsc:.4f}±{sd.dsc:.4f} iou={mean.iou:.4f}±{sd.iou:.4f} "
        f"hd95={mean.hd95:.4f}±{sd.hd95:.4f}"
    )
    return 0


def cmd_uncertainty(args) -> int:
    cfg = _resolve(args)
    if args.runs is not None:
        cfg.set("uncertainty.runs", args.runs)
    if args.centroid is not None:
        cfg.set("sampler.centroid_mode", args.centroid)
    out = _out_dir(args)
    torch.set_num_threads(1)

    model = load_checkpoint(args.checkpoint)
    image = load_image_png(args.image)
    sampler_cfg = cfg.build_sampler_config()
    centroid = _pick_centroid(cfg, args, image)

    masks = sample_ensemble(
        image, model, sampler_cfg, int(cfg["uncertainty.runs"]), int(cfg["seed"]), centroid
    )
    unc = uncertainty(masks)
    np.save(out / "sd.npy", unc.sd)
    figures.save_mean_overlay(image, unc, out / "mean_overlay.png")
    figures.save_sd_heatmap(unc, out / "sd_heatmap.png")
    cfg.save(out)
    print(
        f"uncertainty over {unc.runs} runs: mean SD {unc.sd.mean():.5f}, "
        f"max SD {unc.sd.max():.5f}"
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="surfcdm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="number of samples")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser on a generated dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset root (holds manifest.json)")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment one image with a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None, help="reference mask for the oracle centroid")
    p.add_argument("--centroid", choices=("oracle", "estimated"), default=None)
    p.add_argument("--steps", type=int, default=None, help="override schedule length")
    p.add_argument("--trace", action="store_true", help="also write per-step trace outputs")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("uncertainty", help="ensemble segmentation uncertainty for one image")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None)
    p.add_argument("--centroid", choices=("oracle", "estimated"), default=None)
    p.add_argument("--runs", type=int, default=None)
    p.set_defaults(func=cmd_uncertainty)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except _USAGE_ERRORS as exc:
        print(f"surfcdm: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"surfcdm: {exc}", file=sys.stderr)
        return 1
    except SurfCdmError as exc:
        print(f"surfcdm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
