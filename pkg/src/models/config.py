# src/models/config.py
"""
Configuration Models

Typed, validated configuration for every pipeline stage. Unknown keys are
rejected everywhere; every field has a documented default.

Version: 1.0.0
"""
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.utils.constants import (
    ABLATION_ALPHAS,
    ABLATION_NUM_SEEDS,
    ABLATION_SHOTS,
    ALLOWED_SHOTS,
    AUGMENT_POLICIES,
    AUTOENCODER_BATCH_SIZE,
    AUTOENCODER_EPOCHS,
    AUTOENCODER_LR,
    AUTOENCODER_WIDTHS,
    BETA_END,
    BETA_START,
    DEFAULT_ADAM_BETAS,
    DEFAULT_ADAM_EPS,
    DEFAULT_ALPHA,
    DEFAULT_BASE_LR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EMA_MOMENTUM,
    DEFAULT_EPOCHS,
    DEFAULT_EPSILON,
    DEFAULT_GAMMA,
    DEFAULT_LLRD_DECAY,
    DEFAULT_NOISE_LEVEL,
    DEFAULT_NUM_CLASSES,
    DEFAULT_PER_CLASS_TEST,
    DEFAULT_PER_CLASS_TRAIN,
    DEFAULT_WEIGHT_DECAY,
    DENOISER_BATCH_SIZE,
    DENOISER_EPOCHS,
    DENOISER_HIDDEN,
    DENOISER_LR,
    DIFFUSION_STEPS,
    DOWNSAMPLING_FACTOR,
    GENERATED_PER_CLASS,
    GENERATION_BATCH_SIZE,
    IMAGE_ENCODER_WIDTHS,
    IMAGE_SIZE,
    LATENT_CHANNELS,
    LATENT_ENCODER_WIDTHS,
    LOW_SHOT_EPOCH_MULTIPLIER,
    SAMPLER_X0_CLIP,
    TIME_EMBED_DIM,
    VARIANTS_PER_CLASS,
)


class PhaseOrder(str, Enum):
    """Order of the two training phases inside one epoch."""

    V_FIRST = "V-first"
    G_FIRST = "G-first"


class TrainMode(str, Enum):
    """Which training protocol a run follows."""

    FINETUNE = "finetune"
    AUGDATA = "augdata"
    FLIER = "flier"


class AblationAxis(str, Enum):
    """Axis swept by an ablation grid."""

    ALPHA = "alpha"
    SHOTS = "shots"
    ORDER = "order"
    DATA = "data"


class _StrictModel(BaseModel):
    """Frozen model that rejects unknown keys."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_StrictModel):
    """Encoder geometry shared by training, evaluation and checkpoints."""

    image_size: int = Field(default=IMAGE_SIZE, ge=8)
    downsampling_factor: int = Field(default=DOWNSAMPLING_FACTOR, ge=1)
    latent_channels: int = Field(default=LATENT_CHANNELS, ge=1)
    image_widths: Tuple[int, ...] = Field(default=IMAGE_ENCODER_WIDTHS, min_length=1)
    latent_widths: Tuple[int, int] = LATENT_ENCODER_WIDTHS

    @model_validator(mode="after")
    def validate_geometry(self) -> "ModelConfig":
        """Image size must divide by the downsampling factor and by 2**blocks."""
        if self.image_size % self.downsampling_factor:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by "
                f"downsampling_factor {self.downsampling_factor}"
            )
        if self.image_size % (2 ** len(self.image_widths)):
            raise ValueError(
                f"image_size {self.image_size} cannot be pooled "
                f"{len(self.image_widths)} times"
            )
        if any(w < 1 for w in self.image_widths + self.latent_widths):
            raise ValueError("layer widths must be positive")
        return self

    @property
    def latent_size(self) -> int:
        """Spatial size of the diffusion latent."""
        return self.image_size // self.downsampling_factor


class DatasetConfig(_StrictModel):
    """Synthetic dataset parameters."""

    num_classes: int = Field(default=DEFAULT_NUM_CLASSES, ge=2)
    per_class_train: int = Field(default=DEFAULT_PER_CLASS_TRAIN, ge=1)
    per_class_test: int = Field(default=DEFAULT_PER_CLASS_TEST, ge=1)
    noise_level: float = Field(default=DEFAULT_NOISE_LEVEL, ge=0.0)


class DiffusionConfig(_StrictModel):
    """Toy latent diffusion model: schedule, networks and generation."""

    steps: int = Field(default=DIFFUSION_STEPS, ge=1)
    beta_start: float = Field(default=BETA_START, gt=0.0)
    beta_end: float = Field(default=BETA_END, gt=0.0)
    latent_channels: int = Field(default=LATENT_CHANNELS, ge=1)
    downsampling_factor: int = Field(default=DOWNSAMPLING_FACTOR, ge=1)
    autoencoder_widths: Tuple[int, ...] = Field(default=AUTOENCODER_WIDTHS, min_length=1)
    autoencoder_epochs: int = Field(default=AUTOENCODER_EPOCHS, ge=0)
    autoencoder_lr: float = Field(default=AUTOENCODER_LR, gt=0.0)
    autoencoder_batch_size: int = Field(default=AUTOENCODER_BATCH_SIZE, ge=1)
    denoiser_hidden: int = Field(default=DENOISER_HIDDEN, ge=1)
    time_embed_dim: int = Field(default=TIME_EMBED_DIM, ge=2)
    denoiser_epochs: int = Field(default=DENOISER_EPOCHS, ge=0)
    denoiser_lr: float = Field(default=DENOISER_LR, gt=0.0)
    denoiser_batch_size: int = Field(default=DENOISER_BATCH_SIZE, ge=1)
    variants_per_class: int = Field(default=VARIANTS_PER_CLASS, ge=1)
    count_per_class: int = Field(default=GENERATED_PER_CLASS, ge=0)
    generation_batch_size: int = Field(default=GENERATION_BATCH_SIZE, ge=1)
    sampler_x0_clip: Optional[float] = Field(default=SAMPLER_X0_CLIP, gt=0.0)

    @model_validator(mode="after")
    def validate_betas(self) -> "DiffusionConfig":
        """Betas must stay inside (0, 1) and be non-decreasing."""
        if self.beta_end < self.beta_start:
            raise ValueError("beta_end must be >= beta_start")
        if self.beta_end >= 1.0:
            raise ValueError(f"beta_end {self.beta_end} must be < 1")
        if self.downsampling_factor != 2 ** (len(self.autoencoder_widths) + 1):
            raise ValueError(
                f"downsampling_factor {self.downsampling_factor} needs "
                f"log2(factor) - 1 autoencoder widths, got {len(self.autoencoder_widths)}"
            )
        return self


class TrainConfig(_StrictModel):
    """Joint-training hyperparameters."""

    alpha: float = Field(default=DEFAULT_ALPHA, ge=0.0, le=1.0)
    epsilon: float = Field(default=DEFAULT_EPSILON, ge=0.0, lt=1.0)
    gamma: float = Field(default=DEFAULT_GAMMA, gt=0.0)
    base_lr: float = Field(default=DEFAULT_BASE_LR, gt=0.0)
    weight_decay: float = Field(default=DEFAULT_WEIGHT_DECAY, ge=0.0)
    exclude_bias_decay: bool = False
    epochs: int = Field(default=DEFAULT_EPOCHS, ge=1)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    llrd_decay: float = Field(default=DEFAULT_LLRD_DECAY, gt=0.0, le=1.0)
    ema_momentum: float = Field(default=DEFAULT_EMA_MOMENTUM, ge=0.0, le=1.0)
    phase_order: PhaseOrder = PhaseOrder.V_FIRST
    seed: int = Field(default=0, ge=0)
    adam_betas: Tuple[float, float] = DEFAULT_ADAM_BETAS
    adam_eps: float = Field(default=DEFAULT_ADAM_EPS, gt=0.0)
    augment_policy: Tuple[str, ...] = AUGMENT_POLICIES
    low_shot_epoch_multiplier: int = Field(default=LOW_SHOT_EPOCH_MULTIPLIER, ge=1)
    joint_phase: bool = True
    latent_branch: bool = True

    @field_validator("adam_betas")
    @classmethod
    def validate_betas(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        """Adam betas must lie in [0, 1)."""
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError("adam_betas must lie in [0, 1)")
        return v

    @field_validator("augment_policy")
    @classmethod
    def validate_policy(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        """Only known augmentations, no duplicates."""
        unknown = [p for p in v if p not in AUGMENT_POLICIES]
        if unknown:
            raise ValueError(
                f"unknown augmentations {unknown}; "
                f"valid: {', '.join(AUGMENT_POLICIES)}"
            )
        if len(set(v)) != len(v):
            raise ValueError("augment_policy contains duplicates")
        return v


class AblationConfig(_StrictModel):
    """Ablation harness parameters."""

    alphas: Tuple[float, ...] = ABLATION_ALPHAS
    shots: Tuple[int, ...] = ABLATION_SHOTS
    num_seeds: int = Field(default=ABLATION_NUM_SEEDS, ge=1)
    jobs: int = Field(default=1, ge=1)

    @field_validator("alphas")
    @classmethod
    def validate_alphas(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        """Latent factors live in [0, 1]."""
        if not v or not all(0.0 <= a <= 1.0 for a in v):
            raise ValueError("alphas must be a non-empty list of values in [0, 1]")
        return v

    @field_validator("shots")
    @classmethod
    def validate_shots(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        """Shots must come from the supported set."""
        if not v or any(s not in ALLOWED_SHOTS for s in v):
            raise ValueError(f"shots must be drawn from {ALLOWED_SHOTS}")
        return v


class PathsConfig(_StrictModel):
    """Artifact directories, relative to the output root unless absolute."""

    dataset_dir: str = "dataset"
    cache_dir: str = "cache"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


class RunConfig(_StrictModel):
    """Union of every stage's configuration plus the root seed."""

    seed: int = Field(default=0, ge=0)
    shots: int = Field(default=16, ge=1)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def validate_consistency(self) -> "RunConfig":
        """Diffusion and encoder geometry must agree."""
        if self.diffusion.latent_channels != self.model.latent_channels:
            raise ValueError("diffusion.latent_channels must equal model.latent_channels")
        if self.diffusion.downsampling_factor != self.model.downsampling_factor:
            raise ValueError(
                "diffusion.downsampling_factor must equal model.downsampling_factor"
            )
        return self
