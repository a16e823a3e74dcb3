# tests/conftest.py
"""
Pytest configuration and fixtures for FLIER tests.

Fixtures build deliberately tiny datasets, caches and models (16×16
images, 2×2 latents) so the whole suite runs on a CPU in seconds.
"""
import numpy as np
import pytest

from src.models.config import RunConfig, TrainConfig
from src.models.data import GenerationCache, GenerationRecord
from src.nn.encoders import FlierModels
from src.services.episode_sampler import sample_episode
from src.services.synthetic_data import make_synthetic_dataset

TINY_IMAGE_SIZE = 16
TINY_LATENT_CHANNELS = 2
TINY_LATENT_SIZE = 2
TINY_CLASSES = 3


@pytest.fixture
def rng():
    """Fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset():
    """3 classes, 4 train / 4 test images per class, 16×16."""
    return make_synthetic_dataset(
        num_classes=TINY_CLASSES,
        per_class_train=4,
        per_class_test=4,
        seed=0,
        noise_level=0.05,
        image_size=TINY_IMAGE_SIZE,
    )


def make_cache(num_classes: int, count: int, seed: int = 7) -> GenerationCache:
    """Cache of random records with distinct seeds (no diffusion involved)."""
    gen = np.random.default_rng(seed)
    records = {}
    for c in range(num_classes):
        records[c] = [
            GenerationRecord(
                latent=gen.standard_normal((TINY_LATENT_CHANNELS, TINY_LATENT_SIZE, TINY_LATENT_SIZE)),
                image=np.clip(gen.standard_normal((3, TINY_IMAGE_SIZE, TINY_IMAGE_SIZE)), -1, 1),
                class_label=c,
                token=c * 10 + i % 10,
                seed=1000 * c + i,
            )
            for i in range(count)
        ]
    return GenerationCache(records=records, schedule_hash="s" * 64, decoder_hash="d" * 64)


@pytest.fixture
def tiny_cache():
    """4 generated records per class."""
    return make_cache(TINY_CLASSES, 4)


@pytest.fixture
def tiny_episode(tiny_dataset, tiny_cache):
    """3-way 2-shot episode with generated data."""
    return sample_episode(tiny_dataset, tiny_cache, shots=2, seed=0)


def make_models(seed: int = 0, num_classes: int = TINY_CLASSES) -> FlierModels:
    return FlierModels.init(
        np.random.default_rng(seed),
        num_classes=num_classes,
        image_size=TINY_IMAGE_SIZE,
        image_widths=(4, 4),
        latent_channels=TINY_LATENT_CHANNELS,
        latent_size=TINY_LATENT_SIZE,
        latent_widths=(2, 2),
    )


@pytest.fixture
def tiny_models():
    """Ψ_v (3→4→4), Ψ_l (2→2→2) and both probes for 3 classes."""
    return make_models()


@pytest.fixture
def tiny_train_config():
    """Short, fast schedule without augmentation."""
    return TrainConfig(
        epochs=2,
        batch_size=4,
        base_lr=1e-2,
        ema_momentum=0.9,
        augment_policy=(),
    )


def tiny_run_config_data() -> dict:
    """Nested config mapping for a complete pipeline run at toy scale."""
    return {
        "seed": 3,
        "shots": 2,
        "dataset": {"num_classes": 2, "per_class_train": 4, "per_class_test": 3},
        "model": {
            "image_size": TINY_IMAGE_SIZE,
            "downsampling_factor": 8,
            "latent_channels": TINY_LATENT_CHANNELS,
            "image_widths": [4, 4],
            "latent_widths": [2, 2],
        },
        "diffusion": {
            "steps": 25,
            "latent_channels": TINY_LATENT_CHANNELS,
            "downsampling_factor": 8,
            "autoencoder_widths": [4, 4],
            "autoencoder_epochs": 1,
            "denoiser_epochs": 1,
            "denoiser_hidden": 4,
            "time_embed_dim": 4,
            "variants_per_class": 2,
            "count_per_class": 2,
        },
        "train": {"epochs": 1, "batch_size": 8, "base_lr": 1e-2, "augment_policy": []},
        "ablation": {"alphas": [0.5], "shots": [2], "num_seeds": 1, "jobs": 1},
    }


@pytest.fixture
def tiny_run_config_dict():
    return tiny_run_config_data()


@pytest.fixture
def tiny_run_config(tiny_run_config_dict):
    return RunConfig.model_validate(tiny_run_config_dict)


@pytest.fixture
def isolated_logging(monkeypatch):
    """
    Let flier_app configure logging against this test's captured stderr,
    then restore structlog and the root logger afterwards.
    """
    import logging

    import structlog

    import flier_app
    from src.utils import logging as flier_logging

    def configure(log_level="INFO", log_format="json"):
        flier_logging.setup_logging(log_level, log_format, force=True)

    handlers = logging.getLogger().handlers[:]
    monkeypatch.setattr(flier_app, "setup_logging", configure)
    yield
    structlog.reset_defaults()
    flier_logging._logging_configured = False
    logging.getLogger().handlers[:] = handlers
