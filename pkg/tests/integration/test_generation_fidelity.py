# tests/integration/test_generation_fidelity.py
"""
Class fidelity of the trained generator.

Trains the autoencoder and denoiser with the default diffusion settings on
a two-class synthetic dataset, then checks that sampled latents are
classified as their conditioning class by a nearest-centroid classifier
fitted on real latents, and that their spread stays near the data's.
"""
import numpy as np
import pytest

from src.models.config import DiffusionConfig
from src.services.diffusion import (
    NoiseSchedule,
    encode_dataset_latents,
    generation_seeds,
    sample_latents,
    train_autoencoder,
    train_denoiser,
)
from src.services.synthetic_data import make_synthetic_dataset

pytestmark = [pytest.mark.integration, pytest.mark.slow]

NUM_CLASSES = 2
SAMPLES_PER_CLASS = 50


def _nearest_centroid(centroids: np.ndarray, latents: np.ndarray) -> np.ndarray:
    flat = latents.reshape(latents.shape[0], -1)
    distances = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return distances.argmin(axis=1)


@pytest.fixture(scope="module")
def trained_generator():
    """Autoencoder, denoiser, schedule and real latents for two classes."""
    dataset = make_synthetic_dataset(NUM_CLASSES, 60, 20, seed=11, noise_level=0.1)
    cfg = DiffusionConfig()
    autoencoder = train_autoencoder(dataset.train_images, cfg, seed=12).autoencoder
    train_latents = encode_dataset_latents(autoencoder, dataset.train_images)
    schedule = NoiseSchedule.from_config(cfg)
    denoiser = train_denoiser(
        train_latents, dataset.train_labels, schedule, cfg, NUM_CLASSES, seed=13
    ).denoiser
    return {
        "cfg": cfg,
        "schedule": schedule,
        "denoiser": denoiser,
        "train_latents": train_latents,
        "train_labels": dataset.train_labels,
        "test_latents": encode_dataset_latents(autoencoder, dataset.test_images),
        "test_labels": dataset.test_labels,
    }


@pytest.fixture(scope="module")
def sampled(trained_generator):
    """SAMPLES_PER_CLASS latents per class, tokens cycling through the variants."""
    g = trained_generator
    cfg = g["cfg"]
    latent_shape = g["train_latents"].shape[1:]
    latents, labels = [], []
    for c in range(NUM_CLASSES):
        variants = cfg.variants_per_class
        tokens = [c * variants + i % variants for i in range(SAMPLES_PER_CLASS)]
        seeds = generation_seeds(99, c, SAMPLES_PER_CLASS)
        latents.append(
            sample_latents(
                g["denoiser"], tokens, seeds, g["schedule"], latent_shape, cfg.sampler_x0_clip
            )
        )
        labels.append(np.full(SAMPLES_PER_CLASS, c))
    return np.concatenate(latents), np.concatenate(labels)


def _centroids(g) -> np.ndarray:
    flat = g["train_latents"].reshape(g["train_latents"].shape[0], -1)
    return np.stack([flat[g["train_labels"] == c].mean(axis=0) for c in range(NUM_CLASSES)])


class TestGenerationFidelity:
    """Sampled latents carry their class."""

    def test_classifier_separates_real_latents(self, trained_generator):
        """The centroid classifier is reliable on held-out real latents."""
        g = trained_generator
        predicted = _nearest_centroid(_centroids(g), g["test_latents"])
        assert np.mean(predicted == g["test_labels"]) >= 0.9

    def test_samples_classified_as_their_condition(self, trained_generator, sampled):
        """At least 80% of generated latents land on their conditioning class."""
        latents, labels = sampled
        predicted = _nearest_centroid(_centroids(trained_generator), latents)
        assert np.mean(predicted == labels) >= 0.8

    def test_sample_spread_near_data(self, trained_generator, sampled):
        """Generated latents neither collapse nor blow up relative to real ones."""
        latents, _ = sampled
        ratio = np.std(latents) / np.std(trained_generator["train_latents"])
        assert 0.5 < ratio < 1.5
        assert np.all(np.isfinite(latents))
