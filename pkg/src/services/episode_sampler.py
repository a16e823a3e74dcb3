# src/services/episode_sampler.py
"""
Episode Sampler

Assembles N-way K-shot episodes: K training images per class plus K'
(= K) cached generations per class with their latents, all drawn without
replacement.

Version: 1.0.0
"""
from typing import List, Optional

import numpy as np

from src.models.data import Episode, GenerationCache, SyntheticDataset
from src.utils.constants import ALLOWED_SHOTS
from src.utils.errors import EpisodeError, InsufficientCacheError
from src.utils.logging import get_logger
from src.utils.seeding import stream

logger = get_logger(__name__)


def _check_shots(shots: int, allow_any_shots: bool) -> None:
    if shots < 1:
        raise EpisodeError(f"shots must be positive, got {shots}")
    if not allow_any_shots and shots not in ALLOWED_SHOTS:
        raise EpisodeError(
            f"shots must be one of {list(ALLOWED_SHOTS)} (got {shots}); "
            f"pass allow_any_shots=True for other values"
        )


def sample_episode(
    dataset: SyntheticDataset,
    cache: Optional[GenerationCache],
    shots: int,
    seed: int,
    allow_any_shots: bool = False,
    include_generated: bool = True,
) -> Episode:
    """
    Draw one episode.

    Support images and generated records come from separate seed streams,
    so the support set for a given seed is the same with or without
    generated data.

    Args:
        dataset: Source of training images
        cache: Generated records per class (may be None when
            include_generated is False)
        shots: K (= K')
        seed: Episode seed
        allow_any_shots: Accept K outside {1, 2, 4, 8, 16}
        include_generated: Draw K generated records per class

    Returns:
        Episode satisfying the class-balance and K = K' invariants

    Raises:
        EpisodeError: On invalid K or too few training images
        InsufficientCacheError: Naming the first class with fewer than K records
    """
    _check_shots(shots, allow_any_shots)
    num_classes = dataset.num_classes

    if include_generated:
        for class_label in range(num_classes):
            available = cache.count(class_label) if cache is not None else 0
            if available < shots:
                raise InsufficientCacheError(class_label, available, shots)

    support_rng = stream(seed, "episode", "support")
    generated_rng = stream(seed, "episode", "generated")

    train_idx: List[np.ndarray] = []
    for class_label in range(num_classes):
        pool = dataset.train_indices(class_label)
        if pool.size < shots:
            raise EpisodeError(
                f"class {class_label} has {pool.size} training images, {shots} requested"
            )
        train_idx.append(support_rng.choice(pool, size=shots, replace=False))
    support = np.concatenate(train_idx)

    generated_images = np.zeros((0,) + dataset.train_images.shape[1:])
    generated_labels = np.zeros(0, dtype=np.int64)
    latents = np.zeros((0,))
    seeds = None
    if include_generated:
        chosen = []
        for class_label in range(num_classes):
            records = cache.records[class_label]
            picks = generated_rng.choice(len(records), size=shots, replace=False)
            chosen.extend(records[i] for i in picks)
        generated_images = np.stack([r.image for r in chosen])
        generated_labels = np.array([r.class_label for r in chosen], dtype=np.int64)
        latents = np.stack([r.latent for r in chosen])
        seeds = np.array([r.seed for r in chosen], dtype=np.int64)

    episode = Episode(
        num_classes=num_classes,
        shots=shots,
        train_images=dataset.train_images[support],
        train_labels=dataset.train_labels[support],
        generated_images=generated_images,
        generated_labels=generated_labels,
        latents=latents,
        generated_seeds=seeds,
    )
    logger.debug(
        "episode_sampled",
        num_classes=num_classes,
        shots=shots,
        seed=seed,
        generated=include_generated,
    )
    return episode
