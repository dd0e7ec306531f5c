"""Reconstruction training loop with checkpointing and CSV logging.

Each step samples same-video (source, driving) pairs, masks both frames,
synthesizes the driving frame from the source and minimizes the pyramid
perceptual loss with Adam.  Sampling depends only on (seed, step), so a
run resumed from a checkpoint replays exactly the batches an
uninterrupted run would have seen.
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ADAM_BETAS, HEATMAP, RunConfig
from .data import VideoDataset, _sample_pair, preprocess, to_batch
from .errors import ConfigMismatch, NonFiniteLoss, UnsupportedCheckpoint
from .generator import FrameSynthesizer, build_generator
from .keypoints import KeypointDetector, build_detector, extract_keypoints, spatial_softmax
from .masks import circles_mask, heatmap_mask
from .perceptual import make_extractor, pyramid_loss
from .serialization import read_container, write_container

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"KMCK"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainState:
    cfg: RunConfig
    generator: FrameSynthesizer
    detector: KeypointDetector
    optimizer: torch.optim.Adam
    extractor: torch.nn.Module
    step: int = 0
    out_dir: Path | None = None

    @property
    def finetune_detector(self) -> bool:
        return self.cfg.train.detector_mode == "finetune"


def build_state(
    cfg: RunConfig,
    detector: KeypointDetector | None = None,
    extractor: torch.nn.Module | None = None,
) -> TrainState:
    """Fresh training state with seeded parameter initialization."""
    seed = cfg.train.seed
    generator = build_generator(cfg.generator, seed)
    if detector is None:
        detector = build_detector(cfg.detector, seed + 1)
    if extractor is None:
        extractor = make_extractor(
            cfg.train.extractor, cfg.train.extractor_weights or None
        )
    finetune = cfg.train.detector_mode == "finetune"
    detector.requires_grad_(finetune)
    if not finetune:
        detector.eval()
    params = list(generator.parameters())
    if finetune:
        params += list(detector.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.train.learning_rate, betas=ADAM_BETAS)
    return TrainState(
        cfg=cfg,
        generator=generator,
        detector=detector,
        optimizer=optimizer,
        extractor=extractor,
    )


def make_batch(
    dataset: VideoDataset, cfg: RunConfig, step: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Seeded (source, driving) tensors for one step; step 0 is the probe."""
    side = cfg.generator.input_side
    sources, drivings = [], []
    for i in range(cfg.train.batch_size):
        seq = np.random.SeedSequence(entropy=cfg.train.seed, spawn_key=(step, i))
        src, drv = _sample_pair(dataset, np.random.default_rng(seq))
        sources.append(preprocess(src, side))
        drivings.append(preprocess(drv, side))
    return to_batch(sources), to_batch(drivings)


def compute_masks(
    images: torch.Tensor, state: TrainState, with_grad: bool
) -> torch.Tensor:
    """Structural mask maps (B, 1, h, w) for a batch of frames."""
    det_cfg = state.cfg.detector
    mask_cfg = state.cfg.mask

    def build(stacks: torch.Tensor) -> torch.Tensor:
        if mask_cfg.variant == HEATMAP:
            return heatmap_mask(stacks, threshold=mask_cfg.threshold).map
        probs = spatial_softmax(stacks, det_cfg.temperature)
        kps = extract_keypoints(probs)
        return circles_mask(kps, mask_cfg.variance, stacks.shape[-2:]).map

    if with_grad and state.finetune_detector:
        return build(state.detector(images))
    with torch.no_grad():
        return build(state.detector(images))


def train_step(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor]) -> float:
    """One optimizer update; returns the scalar loss.

    The loss is the pyramid perceptual loss of the reconstructed driving
    frame, averaged over the batch.  A non-finite loss aborts with a
    diagnostic dump before any parameter is touched.
    """
    source, driving = batch
    state.generator.train()
    if state.finetune_detector:
        state.detector.train()
    source_mask = compute_masks(source, state, with_grad=True)
    driving_mask = compute_masks(driving, state, with_grad=True)
    pred = state.generator(source, source_mask, driving_mask)
    loss = pyramid_loss(pred, driving, state.extractor)
    if not torch.isfinite(loss):
        _dump_diagnostics(state, float(loss.detach()))
        raise NonFiniteLoss(f"loss {loss.item()} at step {state.step + 1}")
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return float(loss.detach())


def _dump_diagnostics(state: TrainState, loss: float) -> None:
    summary = {
        "step": state.step + 1,
        "loss": loss,
        "param_norms": {
            name: float(p.detach().norm())
            for name, p in state.generator.named_parameters()
        },
    }
    dump_dir = state.out_dir or Path.cwd()
    path = Path(dump_dir) / f"nonfinite_step{state.step + 1}.json"
    try:
        path.write_text(json.dumps(summary, indent=2))
        log.error("non-finite loss; diagnostics written to %s", path)
    except OSError:
        log.error("non-finite loss; diagnostics could not be written")


def fit(
    dataset: VideoDataset,
    cfg: RunConfig,
    out_dir: str | Path,
    detector: KeypointDetector | None = None,
    extractor: torch.nn.Module | None = None,
    resume_from: str | Path | None = None,
) -> Path:
    """Run the training loop; returns the path of the final checkpoint."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = load_checkpoint(resume_from, expect_cfg=cfg, extractor=extractor)
        log.info("resumed from %s at step %d", resume_from, state.step)
    else:
        state = build_state(cfg, detector=detector, extractor=extractor)
    state.out_dir = out_dir

    log_path = out_dir / "train_log.csv"
    write_header = not log_path.exists()
    steps = cfg.train.steps
    every = cfg.train.checkpoint_every
    with open(log_path, "a", newline="") as log_file:
        if write_header:
            log_file.write("step,loss,wall_ms\n")
        for step in range(state.step + 1, steps + 1):
            batch = make_batch(dataset, cfg, step)
            t0 = time.perf_counter()
            loss = train_step(state, batch)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            log_file.write(f"{step},{loss:.6f},{wall_ms:.1f}\n")
            if step == 1 or step % 50 == 0 or step == steps:
                log.info("step %d/%d loss %.5f", step, steps, loss)
            if every and step % every == 0 and step != steps:
                save_checkpoint(state, out_dir / f"checkpoint_{step:07d}.ckpt")
    final_path = out_dir / f"checkpoint_{steps:07d}.ckpt"
    save_checkpoint(state, final_path)
    shutil.copyfile(final_path, out_dir / "checkpoint_final.ckpt")
    return final_path


# --- persistence ------------------------------------------------------------


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    header = {"config": state.cfg.to_dict(), "step": state.step}
    blobs: dict[str, np.ndarray] = {}
    for name, tensor in state.generator.state_dict().items():
        blobs[f"generator.{name}"] = tensor.detach().cpu().numpy()
    for name, tensor in state.detector.state_dict().items():
        blobs[f"detector.{name}"] = tensor.detach().cpu().numpy()
    opt_state = state.optimizer.state_dict()["state"]
    header["optim_entries"] = sorted(opt_state.keys())
    for idx, entry in opt_state.items():
        for key, value in entry.items():
            tensor = value if isinstance(value, torch.Tensor) else torch.tensor(value)
            blobs[f"optim.{idx}.{key}"] = tensor.detach().cpu().numpy()
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION, header, blobs)


def load_checkpoint(
    path: str | Path,
    expect_cfg: RunConfig | None = None,
    extractor: torch.nn.Module | None = None,
) -> TrainState:
    """Rebuild a full TrainState (models, optimizer, step) from disk."""
    header, blobs = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION)
    try:
        cfg = RunConfig.from_dict(header["config"])
        step = int(header["step"])
    except (KeyError, TypeError) as exc:
        raise UnsupportedCheckpoint(f"{path}: malformed header") from exc
    if expect_cfg is not None:
        _check_structure(cfg, expect_cfg)
    state = build_state(cfg, extractor=extractor)
    state.step = step
    _load_module(state.generator, blobs, "generator.", path)
    _load_module(state.detector, blobs, "detector.", path)
    opt_sd = state.optimizer.state_dict()
    loaded: dict[int, dict[str, torch.Tensor]] = {}
    for idx in header.get("optim_entries", []):
        entry = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            blob = blobs.get(f"optim.{idx}.{key}")
            if blob is not None:
                entry[key] = torch.from_numpy(blob)
        loaded[int(idx)] = entry
    opt_sd["state"] = loaded
    state.optimizer.load_state_dict(opt_sd)
    return state


def _check_structure(stored: RunConfig, expected: RunConfig) -> None:
    stored_d, expected_d = stored.to_dict(), expected.to_dict()
    for section in ("detector", "generator", "mask"):
        if stored_d[section] != expected_d[section]:
            raise ConfigMismatch(
                f"checkpoint {section} config {stored_d[section]} does not "
                f"match expected {expected_d[section]}"
            )


def _load_module(module: torch.nn.Module, blobs, prefix: str, path) -> None:
    state = {
        name[len(prefix):]: torch.from_numpy(arr)
        for name, arr in blobs.items()
        if name.startswith(prefix)
    }
    try:
        module.load_state_dict(state)
    except RuntimeError as exc:
        raise UnsupportedCheckpoint(f"{path}: parameter blobs do not match") from exc


@dataclass
class ModelBundle:
    """Inference-only view of a checkpoint: generator + detector + config."""

    generator: FrameSynthesizer
    detector: KeypointDetector
    cfg: RunConfig


def load_models(path: str | Path) -> ModelBundle:
    header, blobs = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION)
    try:
        cfg = RunConfig.from_dict(header["config"])
    except (KeyError, TypeError) as exc:
        raise UnsupportedCheckpoint(f"{path}: malformed header") from exc
    generator = FrameSynthesizer(cfg.generator)
    detector = KeypointDetector(cfg.detector)
    _load_module(generator, blobs, "generator.", path)
    _load_module(detector, blobs, "detector.", path)
    for module in (generator, detector):
        module.requires_grad_(False)
        module.eval()
    return ModelBundle(generator=generator, detector=detector, cfg=cfg)


# --- probes -----------------------------------------------------------------


def probe_batch(dataset: VideoDataset, cfg: RunConfig) -> tuple[torch.Tensor, torch.Tensor]:
    return make_batch(dataset, cfg, step=0)


def probe_outputs(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
    """Deterministic eval-mode reconstruction of a probe batch."""
    source, driving = batch
    gen_training = state.generator.training
    det_training = state.detector.training
    state.generator.eval()
    state.detector.eval()
    with torch.no_grad():
        source_mask = compute_masks(source, state, with_grad=False)
        driving_mask = compute_masks(driving, state, with_grad=False)
        out = state.generator(source, source_mask, driving_mask)
    if gen_training:
        state.generator.train()
    if det_training:
        state.detector.train()
    return out
