"""Typed configuration for detector, generator, masks and training.

Configs can be built programmatically, loaded from a flat ``key = value``
text file (keys are dot-prefixed per section, e.g. ``train.steps = 200``),
or round-tripped through checkpoint headers via ``to_dict``/``from_dict``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import UsageError

HEATMAP = "heatmap"
CIRCLES = "circles"
MASK_VARIANTS = (HEATMAP, CIRCLES)

ABSOLUTE = "absolute"
RELATIVE = "relative"
TRANSFER_MODES = (ABSOLUTE, RELATIVE)

# Adam moment coefficients, fixed for all runs.
ADAM_BETAS = (0.5, 0.999)

# Raw heatmaps are emitted at 1/4 of the detector input resolution.
HEATMAP_STRIDE = 4


@dataclass
class DetectorConfig:
    """Keypoint detector hyperparameters (hourglass + 7x7 head)."""

    num_keypoints: int = 10
    block_expansion: int = 32
    num_blocks: int = 5
    max_features: int = 1024
    input_side: int = 256
    temperature: float = 0.1
    variance: float = 0.01

    @property
    def grid_side(self) -> int:
        return self.input_side // HEATMAP_STRIDE

    def validate(self) -> None:
        if self.num_keypoints < 1:
            raise UsageError("detector.num_keypoints must be >= 1")
        if self.input_side % HEATMAP_STRIDE != 0:
            raise UsageError("detector.input_side must be divisible by 4")
        if self.grid_side % (2**self.num_blocks) != 0:
            raise UsageError(
                f"heatmap grid {self.grid_side} not divisible by "
                f"2^{self.num_blocks} hourglass levels"
            )
        if self.temperature <= 0:
            raise UsageError("detector.temperature must be > 0")
        if self.variance <= 0:
            raise UsageError("detector.variance must be > 0")


@dataclass
class GeneratorConfig:
    """Two-stage generator hyperparameters."""

    base_channels: int = 64
    n_residual_blocks: int = 6
    highres_depth: int = 5
    input_side: int = 256
    lowres_side: int = 64

    def validate(self) -> None:
        if self.n_residual_blocks < 1:
            raise UsageError("generator.n_residual_blocks must be >= 1")
        if self.highres_depth < 1:
            raise UsageError("generator.highres_depth must be >= 1")
        if self.lowres_side < 1 or self.input_side % self.lowres_side != 0:
            raise UsageError("generator.lowres_side must divide input_side")


@dataclass
class MaskConfig:
    """How detector output is collapsed into a structural mask."""

    variant: str = HEATMAP
    variance: float = 0.01
    # Zeroes mask values below this after rescaling; 0.0 disables.
    threshold: float = 0.0

    def validate(self) -> None:
        if self.variant not in MASK_VARIANTS:
            raise UsageError(f"mask.variant must be one of {MASK_VARIANTS}")
        if self.variance <= 0:
            raise UsageError("mask.variance must be > 0")
        if not 0.0 <= self.threshold < 1.0:
            raise UsageError("mask.threshold must lie in [0, 1)")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 2e-4
    mask_variant: str = HEATMAP
    detector_mode: str = "frozen"
    seed: int = 0
    checkpoint_every: int = 0
    extractor: str = "vgg19"
    extractor_weights: str = ""

    def validate(self) -> None:
        if self.steps < 1:
            raise UsageError("train.steps must be >= 1")
        if self.batch_size < 1:
            raise UsageError("train.batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("train.learning_rate must be > 0")
        if self.mask_variant not in MASK_VARIANTS:
            raise UsageError(f"train.mask_variant must be one of {MASK_VARIANTS}")
        if self.detector_mode not in ("frozen", "finetune"):
            raise UsageError("train.detector_mode must be frozen or finetune")
        if self.seed < 0:
            raise UsageError("train.seed must be >= 0")
        if self.checkpoint_every < 0:
            raise UsageError("train.checkpoint_every must be >= 0")
        if self.extractor not in ("vgg19", "tiny"):
            raise UsageError("train.extractor must be vgg19 or tiny")


@dataclass
class RunConfig:
    """Bundle of all sections, as stored in checkpoint headers."""

    detector: DetectorConfig = field(default_factory=DetectorConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.detector.validate()
        self.generator.validate()
        self.mask.validate()
        self.train.validate()
        if self.detector.input_side != self.generator.input_side:
            raise UsageError(
                "detector.input_side and generator.input_side must agree"
            )

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {
            name: dataclasses.asdict(getattr(self, name))
            for name in ("detector", "generator", "mask", "train")
        }

    @classmethod
    def from_dict(cls, data: dict[str, dict[str, Any]]) -> "RunConfig":
        return cls(
            detector=DetectorConfig(**data["detector"]),
            generator=GeneratorConfig(**data["generator"]),
            mask=MaskConfig(**data["mask"]),
            train=TrainConfig(**data["train"]),
        )

    def apply(self, overrides: dict[str, str]) -> None:
        """Apply flat ``section.field`` string overrides, coercing types."""
        for key, raw in overrides.items():
            section_name, _, field_name = key.partition(".")
            if not field_name or section_name not in (
                "detector",
                "generator",
                "mask",
                "train",
            ):
                raise UsageError(f"unknown config key: {key}")
            section = getattr(self, section_name)
            fields = {f.name: f for f in dataclasses.fields(section)}
            if field_name not in fields:
                raise UsageError(f"unknown config key: {key}")
            setattr(section, field_name, _coerce(raw, fields[field_name].type, key))


def _coerce(raw: str, annotation: Any, key: str) -> Any:
    raw = raw.strip()
    type_name = annotation if isinstance(annotation, str) else annotation.__name__
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_run_config(
    path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
) -> RunConfig:
    """Build a RunConfig from an optional file plus override mapping.

    Overrides take precedence over file values.
    """
    cfg = RunConfig()
    if path is not None:
        cfg.apply(parse_config_file(path))
    if overrides:
        cfg.apply(overrides)
    cfg.validate()
    return cfg
