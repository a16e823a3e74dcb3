# src/models/data.py
"""
Data Containers

Synthetic dataset, generation records, generation cache and few-shot
episodes. These hold numpy arrays, so they are dataclasses rather than
pydantic models; invariants are checked in __post_init__.

Version: 1.0.0
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.utils.artifact_store import sha256_of_arrays
from src.utils.errors import EpisodeError, ShapeMismatchError


@dataclass
class SyntheticDataset:
    """
    Procedurally generated class-conditional images with a fixed test split.

    Train and test images come from disjoint seed ranges.
    """

    num_classes: int
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    seed: int
    noise_level: float
    class_params: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"a dataset needs at least 2 classes, got {self.num_classes}")
        for images, labels, split in (
            (self.train_images, self.train_labels, "train"),
            (self.test_images, self.test_labels, "test"),
        ):
            if images.ndim != 4 or images.shape[0] != labels.shape[0]:
                raise ShapeMismatchError(
                    f"{split} split: {images.shape[0]} images vs {labels.shape[0]} labels"
                )

    @property
    def image_size(self) -> int:
        return int(self.train_images.shape[-1])

    def train_indices(self, class_label: int) -> np.ndarray:
        """Training-split indices of one class, ascending."""
        return np.flatnonzero(self.train_labels == class_label)

    def test_split_hash(self) -> str:
        return sha256_of_arrays(self.test_images, self.test_labels)

    def content_hash(self) -> str:
        return sha256_of_arrays(
            self.train_images, self.train_labels, self.test_images, self.test_labels
        )


@dataclass(frozen=True)
class GenerationRecord:
    """
    One generated sample: the final pre-decoder latent and its decoded image.

    The pair is produced by a single sampler call, so image == decode(latent).
    """

    latent: np.ndarray
    image: np.ndarray
    class_label: int
    token: int
    seed: int


@dataclass
class GenerationCache:
    """Generated records per class plus the provenance hashes of the run."""

    records: Dict[int, List[GenerationRecord]]
    schedule_hash: str = ""
    decoder_hash: str = ""

    def count(self, class_label: int) -> int:
        return len(self.records.get(class_label, []))

    @property
    def classes(self) -> List[int]:
        return sorted(self.records)

    @property
    def min_count(self) -> int:
        return min((len(r) for r in self.records.values()), default=0)


@dataclass
class Episode:
    """
    N-way K-shot training bundle.

    Invariants:
    - K == K' (generated samples per class equal the support size)
    - exactly K items per class in every collection
    - latents[i] and generated_images[i] come from the same GenerationRecord
    """

    num_classes: int
    shots: int
    train_images: np.ndarray
    train_labels: np.ndarray
    generated_images: np.ndarray
    generated_labels: np.ndarray
    latents: np.ndarray
    generated_seeds: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.shots < 1:
            raise EpisodeError(f"shots must be positive, got {self.shots}")
        if self.train_images.shape[0] == 0:
            raise EpisodeError("episode has no training images")
        self._check_balance(self.train_labels, "train_images")
        if self.generated_images.shape[0]:
            self._check_balance(self.generated_labels, "generated_images")
            if self.latents.shape[0] != self.generated_images.shape[0]:
                raise EpisodeError(
                    f"{self.latents.shape[0]} latents for "
                    f"{self.generated_images.shape[0]} generated images"
                )
        elif self.latents.shape[0]:
            raise EpisodeError("latents present without generated images")

    def _check_balance(self, labels: np.ndarray, collection: str) -> None:
        counts = np.bincount(labels.astype(np.int64), minlength=self.num_classes)
        if counts.shape[0] != self.num_classes or np.any(counts != self.shots):
            raise EpisodeError(
                f"{collection} must hold exactly {self.shots} items per class, "
                f"got counts {counts.tolist()}"
            )

    @property
    def generated_shots(self) -> int:
        """K' (0 for an episode without generated data)."""
        return self.generated_images.shape[0] // self.num_classes

    @property
    def has_generated(self) -> bool:
        return self.generated_images.shape[0] > 0
