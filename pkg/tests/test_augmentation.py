# tests/test_augmentation.py
"""
Unit tests for training-time augmentation.
"""
import numpy as np
import pytest

from src.services.augmentation import augment
from src.utils.constants import AUGMENT_POLICIES


class TestAugment:
    """Tests for augment()."""

    @pytest.mark.unit
    def test_empty_policy_is_identity(self, tiny_dataset):
        """No transforms: output equals input (as a copy)."""
        images = tiny_dataset.train_images[:4]
        out = augment(images, (), seed=0)

        np.testing.assert_array_equal(out, images)
        assert out is not images

    @pytest.mark.unit
    @pytest.mark.parametrize("transform", AUGMENT_POLICIES)
    def test_each_transform_keeps_shape(self, tiny_dataset, transform):
        """Every transform returns [B, 3, H, W]."""
        images = tiny_dataset.train_images[:3]
        assert augment(images, [transform], seed=1).shape == images.shape

    @pytest.mark.unit
    def test_full_policy_replays_with_seed(self, tiny_dataset):
        """Fixed seed, full policy: identical outputs."""
        images = tiny_dataset.train_images[:4]
        a = augment(images, AUGMENT_POLICIES, seed=7)
        b = augment(images, AUGMENT_POLICIES, seed=7)

        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, images)

    @pytest.mark.unit
    def test_different_seeds_differ(self, tiny_dataset):
        """Another seed draws other parameters."""
        images = tiny_dataset.train_images[:4]
        a = augment(images, AUGMENT_POLICIES, seed=1)
        b = augment(images, AUGMENT_POLICIES, seed=2)
        assert not np.array_equal(a, b)

    @pytest.mark.unit
    def test_policy_order_irrelevant(self, tiny_dataset):
        """Transforms run in a fixed order whatever the policy lists."""
        images = tiny_dataset.train_images[:2]
        forward = augment(images, ["scale", "crop", "rotate"], seed=3)
        backward = augment(images, ["rotate", "crop", "scale"], seed=3)
        np.testing.assert_array_equal(forward, backward)

    @pytest.mark.unit
    def test_input_not_modified(self, tiny_dataset):
        """The source batch is left untouched."""
        images = tiny_dataset.train_images[:2].copy()
        before = images.copy()
        augment(images, AUGMENT_POLICIES, seed=0)
        np.testing.assert_array_equal(images, before)

    @pytest.mark.unit
    def test_unknown_transform_rejected(self, tiny_dataset):
        """Only the four known transforms are accepted."""
        with pytest.raises(ValueError, match="unknown augmentations"):
            augment(tiny_dataset.train_images[:1], ["flip"], seed=0)
