"""keymask: motion transfer driven by keypoint-derived structural masks."""

__version__ = "0.1.0"

from .config import (
    DetectorConfig,
    GeneratorConfig,
    MaskConfig,
    RunConfig,
    TrainConfig,
)
from .data import (
    Frame,
    VideoDataset,
    load_dataset,
    load_video,
    make_synthetic_dataset,
    preprocess,
    sample_training_pair,
    save_dataset,
)
from .generator import FrameSynthesizer, build_generator, synthesize
from .keypoints import (
    KeypointDetector,
    build_detector,
    extract_keypoints,
    load_pretrained,
    predict_heatmaps,
    render_gaussians,
    save_detector,
    spatial_softmax,
)
from .masks import StructuralMask, circles_mask, heatmap_mask, mask_from_heatmaps
from .metrics import akd, aed, evaluate_reconstruction, l1_metric
from .perceptual import feature_maps, make_extractor, pyramid_loss, reconstruction_loss
from .training import (
    TrainState,
    build_state,
    fit,
    load_checkpoint,
    load_models,
    save_checkpoint,
    train_step,
)
from .transfer import driving_mask, relative_keypoints
from .animate import AnimationJob, animate, render_animation

__all__ = [
    "AnimationJob",
    "DetectorConfig",
    "Frame",
    "FrameSynthesizer",
    "GeneratorConfig",
    "KeypointDetector",
    "MaskConfig",
    "RunConfig",
    "StructuralMask",
    "TrainConfig",
    "TrainState",
    "VideoDataset",
    "akd",
    "aed",
    "animate",
    "build_detector",
    "build_generator",
    "build_state",
    "circles_mask",
    "driving_mask",
    "evaluate_reconstruction",
    "extract_keypoints",
    "feature_maps",
    "fit",
    "heatmap_mask",
    "l1_metric",
    "load_checkpoint",
    "load_dataset",
    "load_models",
    "load_pretrained",
    "load_video",
    "make_extractor",
    "make_synthetic_dataset",
    "mask_from_heatmaps",
    "predict_heatmaps",
    "preprocess",
    "pyramid_loss",
    "reconstruction_loss",
    "relative_keypoints",
    "render_animation",
    "render_gaussians",
    "sample_training_pair",
    "save_checkpoint",
    "save_dataset",
    "save_detector",
    "spatial_softmax",
    "synthesize",
    "train_step",
]
