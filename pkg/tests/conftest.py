import numpy as np
import pytest
import torch

from keymask.config import (
    DetectorConfig,
    GeneratorConfig,
    MaskConfig,
    RunConfig,
    TrainConfig,
)
from keymask.data import make_synthetic_dataset

torch.manual_seed(0)


@pytest.fixture
def toy_det_cfg():
    return DetectorConfig(
        num_keypoints=3,
        block_expansion=8,
        num_blocks=2,
        max_features=32,
        input_side=64,
    )


@pytest.fixture
def toy_gen_cfg():
    return GeneratorConfig(
        base_channels=16,
        n_residual_blocks=2,
        highres_depth=3,
        input_side=64,
        lowres_side=16,
    )


@pytest.fixture
def toy_run_cfg(toy_det_cfg, toy_gen_cfg):
    return RunConfig(
        detector=toy_det_cfg,
        generator=toy_gen_cfg,
        mask=MaskConfig(variant="heatmap"),
        train=TrainConfig(
            steps=8,
            batch_size=2,
            learning_rate=1e-3,
            mask_variant="heatmap",
            detector_mode="finetune",
            seed=0,
            extractor="tiny",
        ),
    )


@pytest.fixture(scope="session")
def synth_dataset():
    return make_synthetic_dataset(n_videos=2, n_frames=6, side=64, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
