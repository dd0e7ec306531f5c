"""Command line entry point.

Subcommands: ``train``, ``animate``, ``evaluate``, ``make-synthetic`` and
``export-masks``.  Flag overrides take precedence over config-file values
(the file defaults to ``$KEYMASK_CONFIG``); the effective config is
echoed to the log.  Failures print a single machine-parsable line
``ERROR <Category>: <msg>`` (exit 1; usage errors exit 2).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from . import __version__
from .animate import AnimationJob, animate
from .config import MASK_VARIANTS, TRANSFER_MODES, RunConfig, load_run_config
from .data import Frame, load_dataset, load_frame_image, make_synthetic_dataset, preprocess, save_dataset
from .errors import KeymaskError, NotFound, UsageError
from .keypoints import (
    extract_keypoints,
    load_pretrained,
    predict_heatmaps,
    render_gaussians,
    spatial_softmax,
)
from .masks import circles_mask, heatmap_mask, save_mask_png
from .metrics import evaluate_reconstruction, format_report, write_report_csv
from .perceptual import make_extractor
from .training import fit, load_models

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argparse with a machine-parsable one-line usage error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR UsageError: {message}", file=sys.stderr)
        sys.exit(2)


def export_masks(frame_path, detector_path, out_dir) -> list[Path]:
    """Write the four figure renderings for one frame.

    Per-channel pre-softmax heatmaps, their summed mask, per-channel
    keypoint Gaussians, and the summed circles mask.
    """
    frame_path = Path(frame_path)
    if not frame_path.exists():
        raise NotFound(f"frame image not found: {frame_path}")
    detector = load_pretrained(detector_path)
    cfg = detector.config
    frame = preprocess(Frame(pixels=load_frame_image(frame_path)), cfg.input_side)

    raw = predict_heatmaps(frame, detector)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    for c in range(raw.shape[0]):
        channel = raw[c]
        span = channel.max() - channel.min()
        viz = (channel - channel.min()) / span if span > 0 else torch.zeros_like(channel)
        path = out_dir / f"heatmap_ch{c:02d}.png"
        save_mask_png(viz, path)
        paths.append(path)
    path = out_dir / "heatmap_mask.png"
    save_mask_png(heatmap_mask(raw), path)
    paths.append(path)

    probs = spatial_softmax(raw, cfg.temperature)
    kps = extract_keypoints(probs)
    blobs = render_gaussians(kps, cfg.variance, (cfg.grid_side, cfg.grid_side))
    for c in range(blobs.shape[0]):
        path = out_dir / f"gaussian_ch{c:02d}.png"
        save_mask_png(blobs[c], path)
        paths.append(path)
    path = out_dir / "circles_mask.png"
    save_mask_png(circles_mask(kps, cfg.variance, (cfg.grid_side, cfg.grid_side)), path)
    paths.append(path)
    return paths


# --- subcommands ------------------------------------------------------------


def _cmd_make_synthetic(args) -> int:
    if args.videos < 1 or args.frames < 2 or args.side < 32:
        raise UsageError("need --videos >= 1, --frames >= 2, --side >= 32")
    seed = getattr(args, "seed", None)
    seed = seed if seed is not None else 0
    train = make_synthetic_dataset(args.videos, args.frames, args.side, seed, split="train")
    save_dataset(train, args.out)
    log.info("wrote %d train videos under %s", len(train), args.out)
    if args.eval_videos:
        eval_ds = make_synthetic_dataset(
            args.eval_videos, args.frames, args.side, seed + 7919, split="eval"
        )
        save_dataset(eval_ds, args.out)
        log.info("wrote %d eval videos under %s", len(eval_ds), args.out)
    print(args.out)
    return 0


_TRAIN_FLAG_KEYS = {
    "steps": "train.steps",
    "batch_size": "train.batch_size",
    "lr": "train.learning_rate",
    "mask": "train.mask_variant",
    "detector_mode": "train.detector_mode",
    "checkpoint_every": "train.checkpoint_every",
    "extractor": "train.extractor",
    "extractor_weights": "train.extractor_weights",
    "k": "detector.num_keypoints",
    "side": "generator.input_side",
}


def _build_run_config(args) -> RunConfig:
    overrides: dict[str, str] = {}
    for flag, key in _TRAIN_FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    seed = getattr(args, "seed", None)
    if seed is not None:
        overrides["train.seed"] = str(seed)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if "generator.input_side" in overrides:
        overrides.setdefault("detector.input_side", overrides["generator.input_side"])
        overrides.setdefault(
            "generator.lowres_side", str(int(overrides["generator.input_side"]) // 4)
        )
    if overrides.get("train.mask_variant"):
        overrides.setdefault("mask.variant", overrides["train.mask_variant"])
    config_path = args.config or os.environ.get("KEYMASK_CONFIG") or None
    cfg = load_run_config(config_path, overrides)
    for section, fields in cfg.to_dict().items():
        for name, value in fields.items():
            log.info("config %s.%s = %s", section, name, value)
    return cfg


def _cmd_train(args) -> int:
    cfg = _build_run_config(args)
    detector = None
    if args.detector_ckpt:
        detector = load_pretrained(args.detector_ckpt, expect_k=cfg.detector.num_keypoints)
        cfg.detector = detector.config
        cfg.validate()
        if cfg.train.detector_mode == "finetune":
            detector.requires_grad_(True)
    extractor = make_extractor(
        cfg.train.extractor,
        cfg.train.extractor_weights or None,
        allow_untrained=args.allow_untrained_extractor,
    )
    dataset = load_dataset(args.data, "train", preprocess_to=cfg.generator.input_side)
    final = fit(
        dataset,
        cfg,
        args.out,
        detector=detector,
        extractor=extractor,
        resume_from=args.resume,
    )
    print(final)
    return 0


def _cmd_animate(args) -> int:
    job = AnimationJob(
        source_path=args.source,
        driving_path=args.driving,
        checkpoint_path=args.ckpt,
        output_dir=args.out,
        mode=args.mode,
        mask_variant=args.mask,
        fps=args.fps,
        contact_sheet=args.contact_sheet,
    )
    paths = animate(job)
    log.info("wrote %d frames to %s", len(paths), args.out)
    print(args.out)
    return 0


def _cmd_evaluate(args) -> int:
    bundle = load_models(args.ckpt)
    dataset = load_dataset(args.data, "eval")
    report = evaluate_reconstruction(
        dataset,
        bundle,
        poses_dir=args.poses,
        embeddings_dir=args.embeddings,
        frames_out=args.frames_out,
    )
    write_report_csv(report, args.out)
    print(format_report(report))
    return 0


def _cmd_export_masks(args) -> int:
    paths = export_masks(args.frame, args.detector_ckpt, args.out)
    log.info("wrote %d mask renderings to %s", len(paths), args.out)
    print(args.out)
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> _Parser:
    # SUPPRESS defaults let the flags appear before or after the subcommand
    # without the subparser default clobbering the top-level value.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="global RNG seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="keymask", description=__doc__, parents=[common])
    parser.add_argument("--version", action="version", version=f"keymask {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("make-synthetic", help="generate the synthetic disc dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=2)
    p.add_argument("--eval-videos", type=int, default=1)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--side", type=int, default=64)
    p.set_defaults(func=_cmd_make_synthetic)

    p = add_parser("train", help="run reconstruction training")
    p.add_argument("--data", required=True, help="dataset root with a train/ split")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--mask", choices=MASK_VARIANTS, default=None)
    p.add_argument("--detector-mode", choices=("frozen", "finetune"), default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="number of keypoints")
    p.add_argument("--side", type=int, default=None, help="input side length")
    p.add_argument("--extractor", choices=("vgg19", "tiny"), default=None)
    p.add_argument("--extractor-weights", default=None)
    p.add_argument("--allow-untrained-extractor", action="store_true")
    p.add_argument("--detector-ckpt", default=None, help="pretrained detector checkpoint")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=_cmd_train)

    p = add_parser("animate", help="animate a source image from a driving video")
    p.add_argument("--source", required=True)
    p.add_argument("--driving", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=TRANSFER_MODES, default="absolute")
    p.add_argument("--mask", choices=MASK_VARIANTS, default=None)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--contact-sheet", action="store_true")
    p.set_defaults(func=_cmd_animate)

    p = add_parser("evaluate", help="reconstruct the eval split and score it")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--poses", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--frames-out", default=None)
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = add_parser("export-masks", help="write the four mask renderings of a frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--detector-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_masks)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", False)
    quiet = getattr(args, "quiet", False)
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeymaskError as exc:
        print(f"ERROR {exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
