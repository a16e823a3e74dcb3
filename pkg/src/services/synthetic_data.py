# src/services/synthetic_data.py
"""
Synthetic Dataset

Procedural class-conditional images: every class has its own hue, shape
and stripe texture; samples jitter position, size and phase and receive
Gaussian pixel noise. Train and test samples use disjoint seed ranges.

Version: 1.0.0
"""
import colorsys
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import ValidationError

from src.models.data import SyntheticDataset
from src.models.reports import DatasetManifest
from src.utils.artifact_store import (
    PathLike,
    load_container,
    read_json,
    save_container,
    write_json_atomic,
)
from src.utils.constants import (
    DATASET_FILE,
    IMAGE_SIZE,
    MANIFEST_FILE,
    MANIFEST_VERSION,
    TEST_SEED_OFFSET,
)
from src.utils.errors import ArtifactError
from src.utils.logging import get_logger
from src.utils.seeding import stream

logger = get_logger(__name__)

SHAPES = ("disk", "square", "ring", "cross", "diamond")

# Mid-gray background in [0, 1] pixel space
_BACKGROUND = 0.5


def class_parameters(num_classes: int) -> List[Dict[str, Any]]:
    """Deterministic appearance parameters of each class."""
    params = []
    for c in range(num_classes):
        hue = c / num_classes
        rgb = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
        params.append(
            {
                "class": c,
                "color": [round(v, 6) for v in rgb],
                "shape": SHAPES[c % len(SHAPES)],
                "frequency": 1.0 + (c // len(SHAPES)) % 3,
                "orientation": round(float(np.pi * ((c * 0.381966) % 1.0)), 6),
            }
        )
    return params


def _shape_mask(shape: str, x: np.ndarray, y: np.ndarray, radius: float) -> np.ndarray:
    if shape == "disk":
        return (x**2 + y**2) <= radius**2
    if shape == "square":
        return (np.abs(x) <= radius * 0.85) & (np.abs(y) <= radius * 0.85)
    if shape == "ring":
        r2 = x**2 + y**2
        return (r2 <= radius**2) & (r2 >= (radius * 0.55) ** 2)
    if shape == "cross":
        arm = radius * 0.35
        return ((np.abs(x) <= arm) & (np.abs(y) <= radius)) | (
            (np.abs(y) <= arm) & (np.abs(x) <= radius)
        )
    if shape == "diamond":
        return (np.abs(x) + np.abs(y)) <= radius * 1.2
    raise ValueError(f"unknown shape '{shape}'")


def render_sample(
    params: Dict[str, Any], rng: np.random.Generator, size: int, noise_level: float
) -> np.ndarray:
    """Render one [3, size, size] image of the class described by params."""
    axis = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    cx, cy = rng.uniform(-0.2, 0.2, size=2)
    radius = rng.uniform(0.4, 0.6)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    x, y = xx - cx, yy - cy

    theta = params["orientation"]
    coordinate = x * np.cos(theta) + y * np.sin(theta)
    texture = 0.5 + 0.5 * np.cos(2.0 * np.pi * params["frequency"] * coordinate + phase)
    mask = _shape_mask(params["shape"], x, y, radius).astype(np.float64)

    color = np.asarray(params["color"])[:, None, None]
    foreground = color * (0.65 + 0.35 * texture[None])
    image = _BACKGROUND * (1.0 - mask[None]) + foreground * mask[None]
    if noise_level > 0:
        image = image + rng.normal(0.0, noise_level, size=image.shape)
    # [0, 1] -> [-1, 1]
    return image * 2.0 - 1.0


def _render_split(
    class_params: List[Dict[str, Any]],
    per_class: int,
    seed: int,
    seed_offset: int,
    size: int,
    noise_level: float,
) -> Tuple[np.ndarray, np.ndarray]:
    num_classes = len(class_params)
    images = np.empty((num_classes * per_class, 3, size, size))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c, params in enumerate(class_params):
        for i in range(per_class):
            index = c * per_class + i
            sample_seed = seed_offset + index
            rng = stream(seed, "dataset", sample_seed)
            images[index] = render_sample(params, rng, size, noise_level)
            labels[index] = c
    return images, labels


def make_synthetic_dataset(
    num_classes: int,
    per_class_train: int,
    per_class_test: int,
    seed: int,
    noise_level: float = 0.1,
    image_size: int = IMAGE_SIZE,
) -> SyntheticDataset:
    """
    Build a balanced synthetic dataset.

    Args:
        num_classes: N_d, at least 2
        per_class_train: Training images per class
        per_class_test: Test images per class
        seed: Dataset seed stream root
        noise_level: Std of additive pixel noise (difficulty dial)
        image_size: Square resolution

    Returns:
        SyntheticDataset, identical for identical arguments

    Raises:
        ValueError: If num_classes < 2 or counts are invalid
    """
    if num_classes < 2:
        raise ValueError(f"a dataset needs at least 2 classes, got {num_classes}")
    if per_class_train < 1 or per_class_test < 1:
        raise ValueError("per-class train and test counts must be positive")
    if num_classes * per_class_train > TEST_SEED_OFFSET:
        raise ValueError("training split would overlap the test seed range")

    class_params = class_parameters(num_classes)
    train_images, train_labels = _render_split(
        class_params, per_class_train, seed, 0, image_size, noise_level
    )
    test_images, test_labels = _render_split(
        class_params, per_class_test, seed, TEST_SEED_OFFSET, image_size, noise_level
    )
    dataset = SyntheticDataset(
        num_classes=num_classes,
        train_images=train_images,
        train_labels=train_labels,
        test_images=test_images,
        test_labels=test_labels,
        seed=seed,
        noise_level=noise_level,
        class_params=class_params,
    )
    logger.info(
        "synthetic_dataset_created",
        num_classes=num_classes,
        train=len(train_labels),
        test=len(test_labels),
        noise_level=noise_level,
    )
    return dataset


def build_manifest(dataset: SyntheticDataset) -> DatasetManifest:
    per_class_train = len(dataset.train_labels) // dataset.num_classes
    per_class_test = len(dataset.test_labels) // dataset.num_classes
    return DatasetManifest(
        version=MANIFEST_VERSION,
        num_classes=dataset.num_classes,
        per_class_train=per_class_train,
        per_class_test=per_class_test,
        image_size=dataset.image_size,
        noise_level=dataset.noise_level,
        seed=dataset.seed,
        train_seed_range=[0, dataset.num_classes * per_class_train],
        test_seed_range=[
            TEST_SEED_OFFSET,
            TEST_SEED_OFFSET + dataset.num_classes * per_class_test,
        ],
        class_params=dataset.class_params,
        content_hash=dataset.content_hash(),
        test_split_hash=dataset.test_split_hash(),
    )


def save_dataset(directory: PathLike, dataset: SyntheticDataset) -> DatasetManifest:
    """Write dataset.bin, then manifest.json (the manifest marks completion)."""
    root = Path(directory)
    manifest = build_manifest(dataset)
    save_container(
        root / DATASET_FILE,
        {
            "train_images": dataset.train_images,
            "train_labels": dataset.train_labels,
            "test_images": dataset.test_images,
            "test_labels": dataset.test_labels,
        },
        {
            "num_classes": dataset.num_classes,
            "seed": dataset.seed,
            "noise_level": dataset.noise_level,
            "class_params": dataset.class_params,
        },
    )
    write_json_atomic(root / MANIFEST_FILE, manifest.model_dump(mode="json"))
    logger.info("dataset_saved", path=str(root), content_hash=manifest.content_hash)
    return manifest


def load_dataset(directory: PathLike, producer: str = "gen-data") -> SyntheticDataset:
    """
    Load a persisted dataset and verify it against its manifest.

    Raises:
        MissingArtifactError: If dataset files are absent
        ArtifactError: If the content hash does not match
    """
    root = Path(directory)
    try:
        manifest = DatasetManifest.model_validate(read_json(root / MANIFEST_FILE, producer))
    except ValidationError as e:
        raise ArtifactError(root / MANIFEST_FILE, "parse error: invalid dataset manifest") from e
    arrays, metadata = load_container(root / DATASET_FILE, producer)
    try:
        dataset = SyntheticDataset(
            num_classes=int(metadata["num_classes"]),
            train_images=arrays["train_images"],
            train_labels=arrays["train_labels"],
            test_images=arrays["test_images"],
            test_labels=arrays["test_labels"],
            seed=int(metadata["seed"]),
            noise_level=float(metadata["noise_level"]),
            class_params=list(metadata.get("class_params", [])),
        )
    except KeyError as e:
        raise ArtifactError(root / DATASET_FILE, f"parse error: missing {e}") from e
    if dataset.content_hash() != manifest.content_hash:
        raise ArtifactError(root / DATASET_FILE, "dataset content does not match manifest")
    return dataset
