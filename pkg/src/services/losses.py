# src/services/losses.py
"""
Losses

Label-smoothed targets, smoothed cross-entropy over temperature softmax,
and the latent-factor weighted joint loss of the generated-data phase.

Version: 1.0.0
"""
from typing import Union

import numpy as np

from src.tensor import ops
from src.tensor.tensor import Tensor
from src.utils.errors import ShapeMismatchError

Targets = Union[int, np.ndarray]


def smooth_targets(target: Targets, num_classes: int, epsilon: float) -> np.ndarray:
    """
    Label-smoothed target distribution.

    y_i = ε/n for i ≠ target, y_target = 1 − ε + ε/n.

    Args:
        target: Class index, or an integer array of indices
        num_classes: n
        epsilon: Smoothing factor in [0, 1)

    Returns:
        [n] for a scalar target, [B, n] for an array

    Raises:
        ValueError: If a target or epsilon is out of range
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    if num_classes < 1:
        raise ValueError(f"num_classes must be positive, got {num_classes}")
    indices = np.asarray(target, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= num_classes):
        raise ValueError(f"target out of range [0, {num_classes}): {target}")

    off = epsilon / num_classes
    targets = np.full(indices.shape + (num_classes,), off)
    np.put_along_axis(
        targets, indices[..., None], 1.0 - epsilon + off, axis=-1
    )
    return targets


def smoothed_cross_entropy(
    logits: Tensor, targets: Targets, epsilon: float, gamma: float = 1.0
) -> Tensor:
    """
    Batch mean of −Σ_i y_i · log p_i with p = softmax(logits / γ).

    log p comes from the fused log-softmax, so no probability is ever
    passed through a raw log.

    Args:
        logits: [B, n]
        targets: B class indices
        epsilon: Smoothing factor
        gamma: Softmax temperature

    Returns:
        Scalar loss tensor
    """
    if logits.ndim != 2:
        raise ShapeMismatchError(f"logits must be [B, n], got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != logits.shape[0]:
        raise ShapeMismatchError(
            f"{targets.shape[0]} targets for a batch of {logits.shape[0]} logits"
        )
    y = smooth_targets(targets, logits.shape[1], epsilon)
    log_probs = ops.log_softmax_temp(logits, gamma)
    return ops.scale(ops.sum(ops.mul(log_probs, y)), -1.0 / logits.shape[0])


def joint_loss(loss_v_prime: Tensor, loss_lg_prime: Tensor, alpha: float) -> Tensor:
    """
    L_G = α · L_LG' + (1 − α) · L_V'

    Raises:
        ValueError: If alpha is outside [0, 1]
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"latent factor alpha must lie in [0, 1], got {alpha}")
    return ops.add(ops.scale(loss_lg_prime, alpha), ops.scale(loss_v_prime, 1.0 - alpha))
