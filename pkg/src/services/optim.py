# src/services/optim.py
"""
Optimization

AdamW with decoupled weight decay, the cosine learning-rate schedule,
layer-wise learning-rate decay (LLRD) and an EMA shadow of the weights.

Version: 1.0.0
"""
import math
from contextlib import contextmanager
from typing import Dict, Iterable, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

from src.tensor.tensor import ParameterSet
from src.utils.constants import (
    DEFAULT_ADAM_BETAS,
    DEFAULT_ADAM_EPS,
    DEFAULT_LLRD_DECAY,
    DEFAULT_WEIGHT_DECAY,
)
from src.utils.logging import get_logger

logger = get_logger(__name__)

LearningRates = Union[float, Mapping[str, float]]


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """
    lr = base_lr · 0.5 · (1 + cos(π · step / total_steps))

    Raises:
        ValueError: If step is outside [0, total_steps]
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def llrd_scale(depth: int, max_depth: int, decay: float = DEFAULT_LLRD_DECAY) -> float:
    """
    decay^(max_depth - depth): the top layer gets 1.0, earlier layers less.

    Raises:
        ValueError: If depth is outside [0, max_depth]
    """
    if not 0 <= depth <= max_depth:
        raise ValueError(f"depth {depth} outside [0, {max_depth}]")
    return decay ** (max_depth - depth)


def layer_learning_rates(
    params: ParameterSet,
    lr: float,
    decay: float = DEFAULT_LLRD_DECAY,
    max_depth: Optional[int] = None,
) -> Dict[str, float]:
    """Effective lr of every parameter: lr · llrd_scale(depth)."""
    top = params.max_depth if max_depth is None else max_depth
    return {name: lr * llrd_scale(p.depth, top, decay) for name, p in params.items()}


class AdamW:
    """
    Adam with bias correction and decoupled weight decay.

    Decay (θ ← θ − lr·wd·θ) applies to every parameter unless
    exclude_vectors is set, in which case parameters with ndim < 2 (biases)
    are left undecayed. Step counts are kept per parameter, so a parameter
    skipped in some steps still gets correct bias correction.
    """

    def __init__(
        self,
        params: ParameterSet,
        weight_decay: float = DEFAULT_WEIGHT_DECAY,
        betas: Tuple[float, float] = DEFAULT_ADAM_BETAS,
        eps: float = DEFAULT_ADAM_EPS,
        exclude_vectors: bool = False,
    ) -> None:
        self.params = params
        self.weight_decay = weight_decay
        self.exclude_vectors = exclude_vectors
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.steps: Dict[str, int] = {n: 0 for n in params}

    def step(self, lrs: LearningRates, names: Optional[Iterable[str]] = None) -> None:
        """
        Update parameters in place from their .grad.

        Args:
            lrs: One learning rate, or a per-parameter mapping
            names: Parameters to update (default: all)
        """
        selected = list(self.params) if names is None else list(names)
        for name in selected:
            param = self.params[name]
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            lr = lrs if isinstance(lrs, (int, float)) else lrs[name]

            self.steps[name] += 1
            k = self.steps[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / (1.0 - self.beta1**k)
            v_hat = self.v[name] / (1.0 - self.beta2**k)

            if self.weight_decay and not (self.exclude_vectors and param.ndim < 2):
                param.data *= 1.0 - lr * self.weight_decay
            param.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class EmaShadow:
    """
    Exponential moving average of a ParameterSet.

    shadow ← m · shadow + (1 − m) · current, parameter-wise.
    """

    def __init__(self, params: ParameterSet, momentum: float) -> None:
        if not 0.0 <= momentum <= 1.0:
            raise ValueError(f"EMA momentum must lie in [0, 1], got {momentum}")
        self.momentum = momentum
        self.shadow: Dict[str, np.ndarray] = params.snapshot()
        self._backup: Dict[str, np.ndarray] = {}

    def update(self, params: ParameterSet, names: Optional[Iterable[str]] = None) -> None:
        """
        Blend current values into the shadow.

        Raises:
            ShapeMismatchError: If names or shapes differ from the shadow
        """
        params.check_compatible(self.shadow)
        m = self.momentum
        for name in params if names is None else names:
            self.shadow[name] = m * self.shadow[name] + (1.0 - m) * params[name].data

    def apply_shadow(self, params: ParameterSet) -> None:
        """Swap shadow values into params, keeping a backup."""
        if self._backup:
            raise RuntimeError("EMA shadow already applied; restore() first")
        self._backup = params.snapshot()
        params.load_snapshot(self.shadow)

    def restore(self, params: ParameterSet) -> None:
        params.load_snapshot(self._backup)
        self._backup = {}

    @contextmanager
    def applied(self, params: ParameterSet) -> Iterator[None]:
        """Evaluate with shadow weights inside the block."""
        self.apply_shadow(params)
        try:
            yield
        finally:
            self.restore(params)
