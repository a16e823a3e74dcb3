# src/tensor/gradcheck.py
"""
Finite-Difference Gradient Check

Compares tape gradients against central differences on sampled
coordinates of every parameter.

Version: 1.0.0
"""
import math
from typing import Callable

import numpy as np

from src.tensor.tape import Tape, backward, no_grad
from src.tensor.tensor import ParameterSet, Tensor
from src.utils.constants import (
    GRADCHECK_COORDS_PER_PARAM,
    GRADCHECK_DEFAULT_H,
    GRADCHECK_DENOMINATOR_EPS,
    GRADCHECK_H_MAX,
    GRADCHECK_H_MIN,
)
from src.utils.logging import get_logger
from src.utils.seeding import stream

logger = get_logger(__name__)

LossFn = Callable[[ParameterSet], Tensor]


def _evaluate(loss_fn: LossFn, params: ParameterSet) -> float:
    with no_grad():
        return loss_fn(params).item()


def finite_diff_check(
    loss_fn: LossFn,
    params: ParameterSet,
    h: float = GRADCHECK_DEFAULT_H,
    coords_per_param: int = GRADCHECK_COORDS_PER_PARAM,
    seed: int = 0,
) -> float:
    """
    Maximum relative error between analytic and central-difference gradients.

    For each sampled coordinate the error is
    |analytic − central| / (|analytic| + |central| + 1e-12).

    Args:
        loss_fn: Deterministic map from params to a scalar loss tensor
        params: Parameters to perturb (values are restored afterwards)
        h: Central-difference step, in [1e-7, 1e-3]
        coords_per_param: Coordinates sampled per parameter (all if fewer)
        seed: Coordinate sampling seed

    Returns:
        Max relative error; inf when the loss produced NaN/Inf

    Raises:
        ValueError: If h is outside [1e-7, 1e-3]
    """
    if not GRADCHECK_H_MIN <= h <= GRADCHECK_H_MAX:
        raise ValueError(
            f"finite-difference step must lie in [{GRADCHECK_H_MIN}, {GRADCHECK_H_MAX}], got {h}"
        )

    with Tape() as tape:
        loss = loss_fn(params)
    if not loss.is_finite():
        logger.warning("gradcheck_nonfinite_loss", stage="analytic")
        return math.inf
    backward(loss, tape, params)
    analytic = {name: param.grad.copy() for name, param in params.items()}

    rng = stream(seed, "gradcheck")
    worst = 0.0
    for name, param in params.items():
        flat = param.data.reshape(-1)
        count = min(coords_per_param, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for coord in coords:
            original = flat[coord]
            try:
                flat[coord] = original + h
                plus = _evaluate(loss_fn, params)
                flat[coord] = original - h
                minus = _evaluate(loss_fn, params)
            finally:
                flat[coord] = original
            central = (plus - minus) / (2.0 * h)
            grad = float(analytic[name].reshape(-1)[coord])
            if not (math.isfinite(central) and math.isfinite(grad)):
                logger.warning("gradcheck_nonfinite_loss", parameter=name, coord=int(coord))
                return math.inf
            error = abs(grad - central) / (
                abs(grad) + abs(central) + GRADCHECK_DENOMINATOR_EPS
            )
            worst = max(worst, error)

    logger.debug("gradcheck_completed", parameters=len(params), max_relative_error=worst)
    return worst
