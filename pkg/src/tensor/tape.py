# src/tensor/tape.py
"""
Gradient Tape

Define-by-run recording of differentiable operations and the reverse pass.
Ops record onto the tape that is active in the current context; outside a
`with Tape():` block nothing is recorded (evaluation mode).

A tape belongs to one thread: the active tape is held in a ContextVar.

Version: 1.0.0
"""
from contextvars import ContextVar, Token
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.tensor.tensor import ParameterSet, Tensor
from src.utils.errors import GradientError
from src.utils.logging import get_logger

logger = get_logger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


@dataclass(frozen=True)
class TapeEntry:
    """One recorded op: output node, input nodes and the backward rule."""

    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward_fn: BackwardFn


class Tape:
    """
    Ordered record of differentiable ops.

    Entries are appended in execution order, so every node's inputs precede
    it. backward() walks the entries once, in reverse.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self.consumed = False
        self._token: Optional[Token] = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def record(
        self,
        op: str,
        output: Tensor,
        inputs: Tuple[Tensor, ...],
        backward_fn: BackwardFn,
    ) -> None:
        if self.consumed:
            raise GradientError("cannot record on a consumed tape; call reset() first")
        self.entries.append(TapeEntry(op, output, inputs, backward_fn))

    def reset(self) -> None:
        """Drop all entries so the tape can record a new graph."""
        self.entries.clear()
        self.consumed = False


def active_tape() -> Optional[Tape]:
    """Tape recording in the current context, if any."""
    return _active_tape.get()


class no_grad:
    """Context manager that suspends recording."""

    def __enter__(self) -> "no_grad":
        self._token = _active_tape.set(None)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        _active_tape.reset(self._token)
        return False


def backward(
    loss: Tensor, tape: Tape, params: Optional[ParameterSet] = None
) -> None:
    """
    Reverse-mode differentiation of a scalar loss.

    Gradients are accumulated into the .grad slot of every leaf tensor with
    requires_grad. When params is given, its gradients are zeroed first so
    parameters that do not reach the loss end with an all-zero gradient.

    Args:
        loss: Scalar tensor recorded on tape
        tape: Tape holding the forward graph
        params: Parameters to reset before accumulation (optional)

    Raises:
        GradientError: Non-scalar loss, empty tape, reused tape, or loss not
            recorded on the tape
    """
    if loss.size != 1:
        raise GradientError(f"backward requires a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise GradientError("double backward without reset: tape already consumed")
    if not tape.entries:
        raise GradientError("backward on an empty tape")

    if params is not None:
        params.zero_grad()

    outputs = {id(entry.output) for entry in tape.entries}
    if id(loss) not in outputs:
        raise GradientError("loss was not produced by an op recorded on this tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}

    for entry in reversed(tape.entries):
        upstream = grads.pop(id(entry.output), None)
        if upstream is None:
            continue
        input_grads = entry.backward_fn(upstream)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
            if key not in outputs:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        grad = grads.get(key)
        if grad is None:
            continue
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        tensor.grad += grad

    tape.consumed = True
    logger.debug("backward_completed", entries=len(tape.entries), leaves=len(leaves))
