# src/services/evaluator.py
"""
Evaluation

Top-1 / top-5 accuracy of the image branch on the fixed test split, raw
and EMA weights, and trainable-parameter accounting.

Version: 1.0.0
"""
from typing import Optional, Tuple

import numpy as np

from src.models.reports import EvalResult, ParamCounts, WeightsUsed
from src.nn.encoders import FlierModels, ImageEncoder, LinearProbe
from src.services.optim import EmaShadow
from src.tensor import ops
from src.tensor.tape import no_grad
from src.tensor.tensor import Tensor
from src.utils.constants import EVAL_BATCH_SIZE, TOP_K
from src.utils.errors import ShapeMismatchError, StructuralInvariantError
from src.utils.logging import get_logger

logger = get_logger(__name__)


def score_logits(
    logits: np.ndarray,
    labels: np.ndarray,
    weights_used: WeightsUsed = WeightsUsed.RAW,
) -> EvalResult:
    """
    Score precomputed logits (or probabilities) against labels.

    Ties are broken toward the lower class index. Top-5 falls back to
    top-min(5, n) for fewer than five classes.

    Raises:
        ValueError: If there are no samples
        ShapeMismatchError: If logits and labels disagree
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty test set")
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatchError(
            f"logits {logits.shape} do not match {labels.shape[0]} labels"
        )

    num_classes = logits.shape[1]
    k = min(TOP_K, num_classes)
    ranked = np.argsort(-logits, axis=1, kind="stable")
    correct = ranked[:, 0] == labels
    in_top_k = np.any(ranked[:, :k] == labels[:, None], axis=1)

    per_class = []
    for c in range(num_classes):
        mask = labels == c
        per_class.append(float(correct[mask].mean()) if mask.any() else 0.0)

    return EvalResult(
        top1=float(correct.mean()),
        top5=float(in_top_k.mean()),
        per_class=per_class,
        n_test=int(labels.size),
        weights_used=weights_used,
    )


def evaluate(
    image_encoder: ImageEncoder,
    image_probe: LinearProbe,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    gamma: float = 1.0,
    weights_used: WeightsUsed = WeightsUsed.RAW,
) -> EvalResult:
    """
    Accuracy of Ψ_v + W_v on a test split, in batches, without recording.

    Args:
        image_encoder: Ψ_v
        image_probe: W_v
        test_images: [N, 3, H, W]
        test_labels: [N]
        gamma: Softmax temperature (ranking is unaffected)
        weights_used: Label stored in the result

    Raises:
        ValueError: On an empty test set
    """
    test_images = np.asarray(test_images, dtype=np.float64)
    if test_images.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty test set")

    chunks = []
    with no_grad():
        for start in range(0, test_images.shape[0], EVAL_BATCH_SIZE):
            batch = Tensor.wrap(test_images[start : start + EVAL_BATCH_SIZE])
            logits = image_probe.logits(image_encoder.encode(batch))
            chunks.append(ops.softmax_temp(logits, gamma).data)
    result = score_logits(np.concatenate(chunks), test_labels, weights_used)
    logger.debug(
        "evaluation_completed",
        top1=result.top1,
        top5=result.top5,
        n_test=result.n_test,
        weights=result.weights_used.value,
    )
    return result


def evaluate_best(
    models: FlierModels,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    gamma: float = 1.0,
    ema: Optional[EmaShadow] = None,
) -> Tuple[EvalResult, Optional[EvalResult], EvalResult]:
    """
    Evaluate raw and (if given) EMA weights; report the better of the two.

    The EMA shadow is swapped in only for its evaluation, so the models
    hold raw weights again on return.

    Returns:
        (raw result, EMA result or None, better result; raw wins ties)
    """
    raw = evaluate(
        models.image_encoder, models.image_probe, test_images, test_labels, gamma
    )
    if ema is None:
        return raw, None, raw
    with ema.applied(models.params):
        shadow = evaluate(
            models.image_encoder,
            models.image_probe,
            test_images,
            test_labels,
            gamma,
            WeightsUsed.EMA,
        )
    best = shadow if shadow.top1 > raw.top1 else raw
    return raw, shadow, best


def count_params(models: FlierModels, max_ratio: Optional[float] = None) -> ParamCounts:
    """
    Trainable scalars of Ψ_v, W_v, Ψ_l and W_l.

    Args:
        models: Constructed models
        max_ratio: Optional upper bound on count(Ψ_l) / count(Ψ_v)

    Raises:
        StructuralInvariantError: If Ψ_l is not smaller than Ψ_v, or the
            ratio reaches max_ratio
    """
    counts = ParamCounts(
        image_encoder=models.image_encoder.params.num_scalars(),
        image_probe=models.image_probe.params.num_scalars(),
        latent_encoder=models.latent_encoder.params.num_scalars(),
        latent_probe=models.latent_probe.params.num_scalars(),
    )
    if counts.latent_encoder >= counts.image_encoder:
        raise StructuralInvariantError(
            f"latent encoder ({counts.latent_encoder}) must be smaller than "
            f"image encoder ({counts.image_encoder})"
        )
    if max_ratio is not None and counts.encoder_ratio >= max_ratio:
        raise StructuralInvariantError(
            f"latent/image encoder ratio {counts.encoder_ratio:.4f} >= {max_ratio}"
        )
    return counts
