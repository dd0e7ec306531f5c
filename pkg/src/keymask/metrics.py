"""Evaluation metrics: L1, average keypoint distance, embedding distance.

Pose and identity-embedding networks are third-party tools; their
outputs are consumed as CSV files (``frame,kp_id,x,y,present`` and
``frame,d0,d1,...``) rather than recomputed here.  L1 is always
computable from pixels alone, so reports degrade gracefully when pose or
embedding files are missing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Frame, VideoDataset, preprocess, save_frame_png
from .errors import ConfigMismatch, ShapeMismatch, UndefinedMetric

log = logging.getLogger(__name__)


@dataclass
class PoseFile:
    """Per-frame body keypoints in pixels with presence flags."""

    coords: np.ndarray  # (T, K, 2) float
    present: np.ndarray  # (T, K) bool
    kp_ids: tuple[int, ...]

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]


@dataclass
class EmbeddingFile:
    """Per-frame identity embeddings, fixed dimension."""

    values: np.ndarray  # (T, D) float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def _frames_to_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames
    return np.stack([f.pixels if isinstance(f, Frame) else np.asarray(f) for f in frames])


def l1_metric(generated, truth) -> float:
    """Mean over frames of the mean absolute pixel difference."""
    gen = _frames_to_array(generated)
    ref = _frames_to_array(truth)
    if gen.shape != ref.shape:
        raise ShapeMismatch(f"generated {gen.shape} vs truth {ref.shape}")
    return float(np.abs(gen - ref).mean())


def akd(pose_generated: PoseFile, pose_truth: PoseFile) -> float:
    """Mean Euclidean distance in pixels over co-present keypoints."""
    if pose_generated.kp_ids != pose_truth.kp_ids:
        raise ConfigMismatch(
            f"keypoint schemas differ: {pose_generated.kp_ids} vs {pose_truth.kp_ids}"
        )
    if pose_generated.n_frames != pose_truth.n_frames:
        raise ConfigMismatch(
            f"frame counts differ: {pose_generated.n_frames} vs {pose_truth.n_frames}"
        )
    both = pose_generated.present & pose_truth.present
    if not both.any():
        raise UndefinedMetric("no keypoint is present in both pose files")
    dist = np.linalg.norm(pose_generated.coords - pose_truth.coords, axis=-1)
    return float(dist[both].mean())


def aed(emb_generated: EmbeddingFile, emb_truth: EmbeddingFile) -> float:
    """Mean per-frame L2 distance between embedding vectors."""
    a, b = emb_generated.values, emb_truth.values
    if a.shape != b.shape:
        raise ConfigMismatch(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, axis=-1).mean())


# --- file schemas -----------------------------------------------------------


def load_pose_csv(path: str | Path) -> PoseFile:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append(
                (
                    int(row["frame"]),
                    int(row["kp_id"]),
                    float(row["x"]),
                    float(row["y"]),
                    int(row["present"]),
                )
            )
    if not rows:
        raise ConfigMismatch(f"empty pose file: {path}")
    n_frames = max(r[0] for r in rows) + 1
    kp_ids = tuple(sorted({r[1] for r in rows}))
    index = {k: i for i, k in enumerate(kp_ids)}
    coords = np.zeros((n_frames, len(kp_ids), 2))
    present = np.zeros((n_frames, len(kp_ids)), dtype=bool)
    for frame, kp_id, x, y, flag in rows:
        coords[frame, index[kp_id]] = (x, y)
        present[frame, index[kp_id]] = bool(flag)
    return PoseFile(coords=coords, present=present, kp_ids=kp_ids)


def write_pose_csv(path: str | Path, pose: PoseFile) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "kp_id", "x", "y", "present"])
        for t in range(pose.n_frames):
            for i, kp_id in enumerate(pose.kp_ids):
                x, y = pose.coords[t, i]
                writer.writerow([t, kp_id, f"{x:.4f}", f"{y:.4f}", int(pose.present[t, i])])


def load_embedding_csv(path: str | Path) -> EmbeddingFile:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[0] != "frame":
            raise ConfigMismatch(f"bad embedding file header: {path}")
        rows = sorted((int(r[0]), [float(v) for v in r[1:]]) for r in reader)
    if not rows:
        raise ConfigMismatch(f"empty embedding file: {path}")
    return EmbeddingFile(values=np.array([v for _, v in rows]))


def write_embedding_csv(path: str | Path, emb: EmbeddingFile) -> None:
    dim = emb.values.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + [f"d{i}" for i in range(dim)])
        for t, vec in enumerate(emb.values):
            writer.writerow([t] + [f"{v:.6f}" for v in vec])


# --- report -----------------------------------------------------------------


@dataclass
class VideoMetrics:
    video_id: str
    l1: float
    akd: float | None = None
    aed: float | None = None


@dataclass
class MetricReport:
    per_video: list[VideoMetrics]

    def _aggregate(self, key: str) -> float | None:
        values = [getattr(v, key) for v in self.per_video if getattr(v, key) is not None]
        return float(np.mean(values)) if values else None

    @property
    def l1(self) -> float | None:
        return self._aggregate("l1")

    @property
    def akd(self) -> float | None:
        return self._aggregate("akd")

    @property
    def aed(self) -> float | None:
        return self._aggregate("aed")


def evaluate_reconstruction(
    dataset: VideoDataset,
    bundle,
    poses_dir: str | Path | None = None,
    embeddings_dir: str | Path | None = None,
    frames_out: str | Path | None = None,
) -> MetricReport:
    """Reconstruct every video from its first frame and score the result.

    Pose/embedding files are looked up per video under
    ``<dir>/generated/<video_id>.csv`` and ``<dir>/truth/<video_id>.csv``;
    missing files simply leave that metric empty for the video.
    """
    from .animate import render_animation  # local import avoids a cycle

    side = bundle.cfg.generator.input_side
    results = []
    for video_id, frames in zip(dataset.video_ids, dataset.videos):
        truth = [preprocess(f, side) for f in frames]
        generated = render_animation(bundle, truth[0], truth, mode="absolute")
        if frames_out is not None:
            video_dir = Path(frames_out) / video_id
            video_dir.mkdir(parents=True, exist_ok=True)
            for t, pixels in enumerate(generated):
                save_frame_png(video_dir / f"{t:07d}.png", pixels)
        entry = VideoMetrics(
            video_id=video_id,
            l1=l1_metric(generated, _frames_to_array(truth)),
        )
        entry.akd = _paired_metric(poses_dir, video_id, load_pose_csv, akd)
        entry.aed = _paired_metric(embeddings_dir, video_id, load_embedding_csv, aed)
        results.append(entry)
    return MetricReport(per_video=results)


def _paired_metric(base_dir, video_id, loader, metric):
    if base_dir is None:
        return None
    gen_path = Path(base_dir) / "generated" / f"{video_id}.csv"
    ref_path = Path(base_dir) / "truth" / f"{video_id}.csv"
    if not gen_path.exists() or not ref_path.exists():
        log.warning("missing %s files for %s; reporting partial results",
                    metric.__name__, video_id)
        return None
    try:
        return metric(loader(gen_path), loader(ref_path))
    except UndefinedMetric as exc:
        log.warning("%s undefined for %s: %s", metric.__name__, video_id, exc)
        return None


def write_report_csv(report: MetricReport, path: str | Path) -> None:
    def fmt(value):
        return "" if value is None else f"{value:.6f}"

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "akd", "aed", "l1"])
        for row in report.per_video:
            writer.writerow([row.video_id, fmt(row.akd), fmt(row.aed), fmt(row.l1)])
        writer.writerow(["aggregate", fmt(report.akd), fmt(report.aed), fmt(report.l1)])


def format_report(report: MetricReport) -> str:
    def fmt(value):
        return "   --" if value is None else f"{value:8.4f}"

    lines = [f"{'video':<16}{'AKD':>10}{'AED':>10}{'L1':>10}"]
    for row in report.per_video:
        lines.append(f"{row.video_id:<16}{fmt(row.akd):>10}{fmt(row.aed):>10}{fmt(row.l1):>10}")
    lines.append(f"{'aggregate':<16}{fmt(report.akd):>10}{fmt(report.aed):>10}{fmt(report.l1):>10}")
    return "\n".join(lines)
