"""End-user animation: source image + driving video + checkpoint -> frames.

Generation is per-frame pure (frame t depends only on the source, the
driving frame t and the driving first frame), so outputs can be rendered
in any order; they are written as numbered PNGs.  Container muxing is
left to an external encoder.
"""

from __future__ import annotations

import logging
import shutil
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .config import ABSOLUTE, CIRCLES, RELATIVE, TRANSFER_MODES, MaskConfig
from .data import Frame, FrameSequence, load_frame_image, load_video, preprocess, save_frame_png, to_batch
from .errors import IncompatibleMode, NotFound
from .keypoints import extract_keypoints, predict_heatmaps, spatial_softmax
from .masks import circles_mask, mask_from_heatmaps
from .training import ModelBundle, load_models
from .transfer import relative_keypoints

log = logging.getLogger(__name__)


@dataclass
class AnimationJob:
    source_path: str | Path
    driving_path: str | Path
    checkpoint_path: str | Path
    output_dir: str | Path
    mode: str = ABSOLUTE
    mask_variant: str | None = None  # None: use the checkpoint's variant
    fps: float | None = None
    contact_sheet: bool = False


def render_animation(
    bundle: ModelBundle,
    source: Frame,
    driving: FrameSequence,
    mode: str = ABSOLUTE,
    mask_cfg: MaskConfig | None = None,
) -> np.ndarray:
    """Synthesize one output frame per driving frame; returns (T, H, W, 3)."""
    if mode not in TRANSFER_MODES:
        raise IncompatibleMode(f"unknown transfer mode: {mode}")
    mask_cfg = mask_cfg if mask_cfg is not None else bundle.cfg.mask
    if mode == RELATIVE and mask_cfg.variant != CIRCLES:
        raise IncompatibleMode("relative transfer requires the circles mask variant")

    detector = bundle.detector
    det_cfg = bundle.cfg.detector
    side = bundle.cfg.generator.input_side
    grid = (det_cfg.grid_side, det_cfg.grid_side)

    source = preprocess(source, side)
    driving = [preprocess(f, side) for f in driving]
    source_batch = to_batch(source)

    raw_source = predict_heatmaps(source_batch, detector)
    source_mask = mask_from_heatmaps(raw_source, mask_cfg, det_cfg.temperature).map

    kp_source = kp_first = None
    if mode == RELATIVE:
        kp_source = extract_keypoints(spatial_softmax(raw_source, det_cfg.temperature))
        raw_first = predict_heatmaps(to_batch(driving[0]), detector)
        kp_first = extract_keypoints(spatial_softmax(raw_first, det_cfg.temperature))

    outputs = []
    with torch.no_grad():
        for frame in driving:
            raw_t = predict_heatmaps(to_batch(frame), detector)
            if mode == ABSOLUTE:
                mask_t = mask_from_heatmaps(raw_t, mask_cfg, det_cfg.temperature).map
            else:
                kp_t = extract_keypoints(spatial_softmax(raw_t, det_cfg.temperature))
                moved = relative_keypoints(kp_source, kp_t, kp_first)
                mask_t = circles_mask(moved, mask_cfg.variance, grid).map
            out = bundle.generator(source_batch, source_mask, mask_t)
            outputs.append(out[0].permute(1, 2, 0).numpy().astype(np.float32))
    return np.stack(outputs)


def animate(job: AnimationJob) -> list[Path]:
    """Run a full animation job; returns the written frame paths."""
    if job.mode not in TRANSFER_MODES:
        raise IncompatibleMode(f"unknown transfer mode: {job.mode}")
    bundle = load_models(job.checkpoint_path)
    mask_cfg = bundle.cfg.mask
    if job.mask_variant is not None and job.mask_variant != mask_cfg.variant:
        log.warning(
            "checkpoint was trained with the %s mask; animating with %s",
            mask_cfg.variant,
            job.mask_variant,
        )
        mask_cfg = replace(mask_cfg, variant=job.mask_variant)
    # Fail before any frame is processed.
    if job.mode == RELATIVE and mask_cfg.variant != CIRCLES:
        raise IncompatibleMode("relative transfer requires the circles mask variant")

    source_path = Path(job.source_path)
    if not source_path.exists():
        raise NotFound(f"source image not found: {source_path}")
    source = Frame(pixels=load_frame_image(source_path), source_id=source_path.stem)
    driving = load_video(job.driving_path)

    frames = render_animation(bundle, source, driving, job.mode, mask_cfg)

    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, pixels in enumerate(frames):
        path = out_dir / f"{t:07d}.png"
        save_frame_png(path, pixels)
        paths.append(path)

    if job.contact_sheet:
        side = bundle.cfg.generator.input_side
        sheet_rows = [
            [preprocess(source, side).pixels] + [preprocess(f, side).pixels for f in driving],
            [preprocess(source, side).pixels] + list(frames),
        ]
        save_frame_png(out_dir / "contact_sheet.png", _tile(sheet_rows))

    if job.fps:
        _maybe_mux(out_dir, job.fps)
    return paths


def _tile(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Stack tiles into one sheet with white separators."""
    tile_h, tile_w = rows[0][0].shape[:2]
    n_cols = max(len(r) for r in rows)
    height = len(rows) * tile_h + (len(rows) + 1) * pad
    width = n_cols * tile_w + (n_cols + 1) * pad
    sheet = np.ones((height, width, 3), dtype=np.float32)
    for r, row in enumerate(rows):
        for c, tile in enumerate(row):
            y = pad + r * (tile_h + pad)
            x = pad + c * (tile_w + pad)
            sheet[y : y + tile_h, x : x + tile_w] = tile
    return sheet


def _maybe_mux(out_dir: Path, fps: float) -> None:
    encoder = shutil.which("ffmpeg")
    if encoder is None:
        log.warning("ffmpeg not found; frames left unmuxed in %s", out_dir)
        return
    cmd = [
        encoder, "-y", "-framerate", str(fps),
        "-i", str(out_dir / "%07d.png"),
        "-pix_fmt", "yuv420p", str(out_dir / "animation.mp4"),
    ]
    try:
        subprocess.run(cmd, check=True, capture_output=True)
    except subprocess.CalledProcessError as exc:
        log.warning("muxing failed: %s", exc.stderr.decode(errors="replace"))
