# src/services/augmentation.py
"""
Training-Time Augmentation

Label-preserving scale, crop, rotation and color jitter on [B, 3, H, W]
batches. Transforms are applied in a fixed order, whatever order the
policy lists them in, and all draws come from one seeded stream.

Version: 1.0.0
"""
from typing import Iterable

import numpy as np
from scipy import ndimage

from src.utils.constants import (
    AUGMENT_BRIGHTNESS,
    AUGMENT_CONTRAST,
    AUGMENT_CROP_PADDING,
    AUGMENT_POLICIES,
    AUGMENT_ROTATION_DEGREES,
    AUGMENT_SCALE_RANGE,
)
from src.utils.logging import get_logger
from src.utils.seeding import stream

logger = get_logger(__name__)


def _fit(image: np.ndarray, size: int) -> np.ndarray:
    """Center-crop or edge-pad a [C, h, w] image to [C, size, size]."""
    _, height, width = image.shape
    if height >= size:
        top = (height - size) // 2
        image = image[:, top : top + size, :]
    else:
        before = (size - height) // 2
        image = np.pad(image, ((0, 0), (before, size - height - before), (0, 0)), mode="edge")
    if width >= size:
        left = (width - size) // 2
        image = image[:, :, left : left + size]
    else:
        before = (size - width) // 2
        image = np.pad(image, ((0, 0), (0, 0), (before, size - width - before)), mode="edge")
    return image


def _scale(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    factor = rng.uniform(*AUGMENT_SCALE_RANGE)
    zoomed = ndimage.zoom(image, (1.0, factor, factor), order=1, mode="nearest")
    return _fit(zoomed, image.shape[-1])


def _crop(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    pad = AUGMENT_CROP_PADDING
    size = image.shape[-1]
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    top, left = rng.integers(0, 2 * pad + 1, size=2)
    return padded[:, top : top + size, left : left + size]


def _rotate(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(-AUGMENT_ROTATION_DEGREES, AUGMENT_ROTATION_DEGREES)
    return ndimage.rotate(image, angle, axes=(1, 2), reshape=False, order=1, mode="nearest")


def _color_jitter(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    brightness = rng.uniform(-AUGMENT_BRIGHTNESS, AUGMENT_BRIGHTNESS)
    contrast = rng.uniform(1.0 - AUGMENT_CONTRAST, 1.0 + AUGMENT_CONTRAST)
    mean = image.mean(axis=(1, 2), keepdims=True)
    return (image - mean) * contrast + mean + brightness


_TRANSFORMS = {
    "scale": _scale,
    "crop": _crop,
    "rotate": _rotate,
    "color-jitter": _color_jitter,
}


def augment(images: np.ndarray, policy: Iterable[str], seed: int) -> np.ndarray:
    """
    Apply the policy's transforms to every image of a batch.

    Args:
        images: Batch [B, 3, H, W]
        policy: Any subset of scale, crop, rotate, color-jitter
        seed: Stream seed; identical seeds give identical outputs

    Returns:
        New batch of the same shape (a copy of the input for an empty policy)

    Raises:
        ValueError: On an unknown transform name
    """
    requested = set(policy)
    unknown = requested - set(AUGMENT_POLICIES)
    if unknown:
        raise ValueError(
            f"unknown augmentations {sorted(unknown)}; valid: {', '.join(AUGMENT_POLICIES)}"
        )
    images = np.asarray(images, dtype=np.float64)
    if not requested:
        return images.copy()

    rng = stream(seed, "augment")
    out = np.empty_like(images)
    for i, image in enumerate(images):
        for name in AUGMENT_POLICIES:
            if name in requested:
                image = _TRANSFORMS[name](image, rng)
        out[i] = image
    return out
