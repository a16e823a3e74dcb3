# src/utils/constants.py
"""
Application Constants

Centralized constants to avoid magic numbers throughout the codebase.
All numeric defaults of the training protocol, the toy diffusion model and
the artifact formats are defined here.

Version: 1.0.0
"""

# =============================================================================
# LOGGING SETTINGS
# =============================================================================

# Maximum length for log field values (prevents log bloat)
LOG_FIELD_MAX_LENGTH = 200

# Valid logging levels
VALID_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}

# Valid log renderers
VALID_LOG_FORMATS = {"json", "console"}

# =============================================================================
# GEOMETRY
# =============================================================================

# Image resolution (square) and channel count
IMAGE_SIZE = 32
IMAGE_CHANNELS = 3

# Spatial downsampling between images and diffusion latents
DOWNSAMPLING_FACTOR = 8

# Channels of the diffusion latent
LATENT_CHANNELS = 4

# Image encoder conv-relu-pool block widths; last width is the feature dim D
IMAGE_ENCODER_WIDTHS = (48, 64, 64)

# Latent encoder conv widths; last width is the feature dim D_l
LATENT_ENCODER_WIDTHS = (16, 32)

# Autoencoder (first diffusion stage) encoder widths before the latent conv
AUTOENCODER_WIDTHS = (16, 32)

# =============================================================================
# FEW-SHOT PROTOCOL
# =============================================================================

# Supported shot counts
ALLOWED_SHOTS = (1, 2, 4, 8, 16)

# Shot counts that get a longer schedule to converge
LOW_SHOT_SETTINGS = (1, 2)

# Epoch multiplier applied to low-shot settings
LOW_SHOT_EPOCH_MULTIPLIER = 2

# Default class count of the synthetic task
DEFAULT_NUM_CLASSES = 10

# Training / test images per class in the synthetic dataset
DEFAULT_PER_CLASS_TRAIN = 20
DEFAULT_PER_CLASS_TEST = 30

# Pixel noise standard deviation ("moderate" difficulty)
DEFAULT_NOISE_LEVEL = 0.1

# Offset separating test sample seeds from training sample seeds
TEST_SEED_OFFSET = 1_000_000

# =============================================================================
# TRAINING DEFAULTS
# =============================================================================

DEFAULT_ALPHA = 0.5
DEFAULT_EPSILON = 0.1
DEFAULT_GAMMA = 1.0
DEFAULT_BASE_LR = 1e-4
DEFAULT_WEIGHT_DECAY = 0.05
DEFAULT_EPOCHS = 40
DEFAULT_BATCH_SIZE = 64
DEFAULT_LLRD_DECAY = 0.7
DEFAULT_EMA_MOMENTUM = 0.9998
DEFAULT_ADAM_BETAS = (0.9, 0.999)
DEFAULT_ADAM_EPS = 1e-8

# Augmentations applied to images fed to the image encoder
AUGMENT_POLICIES = ("scale", "crop", "rotate", "color-jitter")

# Augmentation magnitudes
AUGMENT_SCALE_RANGE = (0.9, 1.1)
AUGMENT_CROP_PADDING = 4
AUGMENT_ROTATION_DEGREES = 15.0
AUGMENT_BRIGHTNESS = 0.1
AUGMENT_CONTRAST = 0.1

# Evaluation batch size (no gradients recorded)
EVAL_BATCH_SIZE = 128

# Top-k used for the secondary accuracy metric
TOP_K = 5

# =============================================================================
# DIFFUSION DEFAULTS
# =============================================================================

# Forward-process step count
DIFFUSION_STEPS = 50

# Linear beta schedule endpoints over the forward process
BETA_START = 1e-4
BETA_END = 0.02

# Condition tokens per class (class_id * 10 + variant)
VARIANTS_PER_CLASS = 10

# Generated records per class and sampler batch size
GENERATED_PER_CLASS = 20
GENERATION_BATCH_SIZE = 2

# Predicted x0 clamp used by the deterministic sampler
SAMPLER_X0_CLIP = 5.0

# Denoiser network
DENOISER_HIDDEN = 32
TIME_EMBED_DIM = 16

# Denoiser / autoencoder optimisation
DENOISER_EPOCHS = 60
DENOISER_LR = 2e-3
DENOISER_BATCH_SIZE = 64
AUTOENCODER_EPOCHS = 30
AUTOENCODER_LR = 2e-3
AUTOENCODER_BATCH_SIZE = 32

# Fraction of latents held out to measure denoiser validation MSE
DENOISER_VALIDATION_FRACTION = 0.2

# Required relative drop of validation MSE for a converged denoiser
DENOISER_MIN_IMPROVEMENT = 0.5

# =============================================================================
# GRADIENT CHECK
# =============================================================================

GRADCHECK_H_MIN = 1e-7
GRADCHECK_H_MAX = 1e-3
GRADCHECK_DEFAULT_H = 1e-5
GRADCHECK_DENOMINATOR_EPS = 1e-12
GRADCHECK_COORDS_PER_PARAM = 8

# =============================================================================
# ABLATIONS
# =============================================================================

ABLATION_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)
ABLATION_SHOTS = (1, 2, 4, 8, 16)
ABLATION_NUM_SEEDS = 5

# Fraction of paired seeds that must favour the joint model for the sign test
SIGN_TEST_MIN_FRACTION = 0.8

# Latent factors that should each match or beat the largest one (interior optimum)
ALPHA_SHAPE_INTERIOR = (0.3, 0.5, 0.7)
ALPHA_SHAPE_REFERENCE = 0.9

# =============================================================================
# ARTIFACTS
# =============================================================================

# Binary tensor container
TENSOR_STORE_MAGIC = b"FLIERTS\x00"
TENSOR_STORE_VERSION = 1

# Generation cache / dataset manifest schema version
MANIFEST_VERSION = 1

# Artifact file names
DATASET_FILE = "dataset.bin"
MANIFEST_FILE = "manifest.json"
AUTOENCODER_CHECKPOINT = "autoencoder.ckpt"
DENOISER_CHECKPOINT = "denoiser.ckpt"
MODEL_CHECKPOINT = "flier.ckpt"
TRAIN_REPORT_FILE = "train_report.jsonl"
EVAL_REPORT_FILE = "eval.json"

# Default output root (overridden by FLIER_OUTPUT_ROOT)
DEFAULT_OUTPUT_ROOT = "flier_runs"
