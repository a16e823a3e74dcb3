# src/tensor/ops.py
"""
Differentiable Operations

The closed op set used by every network in the pipeline: conv2d,
conv_transpose2d, linear, relu, max_pool2d, mean_pool, reshape/flatten,
add, sub, scale, mul, log, sum, mean, softmax_temp and the fused
log_softmax_temp. Each op computes its result with numpy and, when a tape
is active and an input requires gradients, records its backward rule.

Version: 1.0.0
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.tensor.tape import BackwardFn, active_tape
from src.tensor.tensor import Tensor, as_tensor
from src.utils.errors import ShapeMismatchError

Axis = Optional[Union[int, Tuple[int, ...]]]


def _record(
    op: str, out: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn
) -> Tensor:
    """Wrap an op result and record it when any input needs gradients."""
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor.wrap(out, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, result, inputs, backward_fn)
    return result


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the input's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_ndim(tensor: Tensor, ndim: int, what: str) -> None:
    if tensor.ndim != ndim:
        raise ShapeMismatchError(
            f"{what} must be {ndim}-dimensional, got shape {tensor.shape}"
        )


# =============================================================================
# CONVOLUTIONS
# =============================================================================


def conv2d(
    x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """
    2-D cross-correlation.

    Args:
        x: Input [B, C_in, H, W]
        kernel: Weights [C_out, C_in, kH, kW]
        bias: Bias [C_out]
        stride: Positive step
        padding: Zero padding on each spatial border

    Returns:
        Output [B, C_out, H', W'] with H' = floor((H + 2p - kH) / s) + 1

    Raises:
        ValueError: Non-positive stride or negative padding
        ShapeMismatchError: Naming the offending dimension
    """
    if stride <= 0:
        raise ValueError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be non-negative, got {padding}")
    _require_ndim(x, 4, "conv2d input")
    _require_ndim(kernel, 4, "conv2d kernel")
    _require_ndim(bias, 1, "conv2d bias")

    batch, channels, height, width = x.shape
    out_channels, in_channels, k_h, k_w = kernel.shape
    if in_channels != channels:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input C_in={channels}, kernel C_in={in_channels}"
        )
    if bias.shape[0] != out_channels:
        raise ShapeMismatchError(
            f"conv2d bias length {bias.shape[0]} != C_out {out_channels}"
        )
    if k_h > height + 2 * padding:
        raise ShapeMismatchError(
            f"conv2d kernel height {k_h} exceeds padded input height {height + 2 * padding}"
        )
    if k_w > width + 2 * padding:
        raise ShapeMismatchError(
            f"conv2d kernel width {k_w} exceeds padded input width {width + 2 * padding}"
        )

    out_h = (height + 2 * padding - k_h) // stride + 1
    out_w = (width + 2 * padding - k_w) // stride + 1
    padded = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.data
    )
    # windows: [B, C_in, H', W', kH, kW]
    windows = sliding_window_view(padded, (k_h, k_w), axis=(2, 3))[
        :, :, ::stride, ::stride
    ][:, :, :out_h, :out_w]
    w = kernel.data
    out = np.einsum("bchwij,ocij->bohw", windows, w, optimize=True)
    out = out + bias.data[None, :, None, None]

    def backward_fn(grad: np.ndarray):
        grad_kernel = np.einsum("bchwij,bohw->ocij", windows, grad, optimize=True)
        grad_bias = grad.sum(axis=(0, 2, 3))
        grad_padded = np.zeros_like(padded)
        for i in range(k_h):
            for j in range(k_w):
                grad_padded[
                    :,
                    :,
                    i : i + stride * (out_h - 1) + 1 : stride,
                    j : j + stride * (out_w - 1) + 1 : stride,
                ] += np.einsum("bohw,oc->bchw", grad, w[:, :, i, j], optimize=True)
        if padding:
            grad_x = grad_padded[:, :, padding:-padding, padding:-padding]
        else:
            grad_x = grad_padded
        return grad_x, grad_kernel, grad_bias

    return _record("conv2d", out, (x, kernel, bias), backward_fn)


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 2) -> Tensor:
    """
    Transposed 2-D convolution without padding.

    Args:
        x: Input [B, C_in, H, W]
        kernel: Weights [C_in, C_out, kH, kW]
        bias: Bias [C_out]
        stride: Positive upsampling step

    Returns:
        Output [B, C_out, (H - 1) * s + kH, (W - 1) * s + kW]
    """
    if stride <= 0:
        raise ValueError(f"conv_transpose2d stride must be positive, got {stride}")
    _require_ndim(x, 4, "conv_transpose2d input")
    _require_ndim(kernel, 4, "conv_transpose2d kernel")
    _require_ndim(bias, 1, "conv_transpose2d bias")

    batch, channels, height, width = x.shape
    in_channels, out_channels, k_h, k_w = kernel.shape
    if in_channels != channels:
        raise ShapeMismatchError(
            f"conv_transpose2d channel mismatch: input C_in={channels}, "
            f"kernel C_in={in_channels}"
        )
    if bias.shape[0] != out_channels:
        raise ShapeMismatchError(
            f"conv_transpose2d bias length {bias.shape[0]} != C_out {out_channels}"
        )

    out_h = (height - 1) * stride + k_h
    out_w = (width - 1) * stride + k_w
    w = kernel.data
    out = np.zeros((batch, out_channels, out_h, out_w))
    for i in range(k_h):
        for j in range(k_w):
            out[
                :,
                :,
                i : i + stride * (height - 1) + 1 : stride,
                j : j + stride * (width - 1) + 1 : stride,
            ] += np.einsum("bchw,co->bohw", x.data, w[:, :, i, j], optimize=True)
    out += bias.data[None, :, None, None]

    def backward_fn(grad: np.ndarray):
        grad_x = np.zeros_like(x.data)
        grad_kernel = np.zeros_like(w)
        for i in range(k_h):
            for j in range(k_w):
                window = grad[
                    :,
                    :,
                    i : i + stride * (height - 1) + 1 : stride,
                    j : j + stride * (width - 1) + 1 : stride,
                ]
                grad_x += np.einsum("bohw,co->bchw", window, w[:, :, i, j], optimize=True)
                grad_kernel[:, :, i, j] = np.einsum(
                    "bchw,bohw->co", x.data, window, optimize=True
                )
        return grad_x, grad_kernel, grad.sum(axis=(0, 2, 3))

    return _record("conv_transpose2d", out, (x, kernel, bias), backward_fn)


# =============================================================================
# DENSE
# =============================================================================


def linear(features: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map output[b, k] = Σ_d features[b, d] · weight[d, k] + bias[k].

    Raises:
        ShapeMismatchError: If inner dimensions or the bias length disagree
    """
    _require_ndim(features, 2, "linear features")
    _require_ndim(weight, 2, "linear weight")
    _require_ndim(bias, 1, "linear bias")
    if features.shape[1] != weight.shape[0]:
        raise ShapeMismatchError(
            f"linear inner dimension mismatch: features D={features.shape[1]}, "
            f"weight D={weight.shape[0]}"
        )
    if bias.shape[0] != weight.shape[1]:
        raise ShapeMismatchError(
            f"linear bias length {bias.shape[0]} != K {weight.shape[1]}"
        )

    out = features.data @ weight.data + bias.data

    def backward_fn(grad: np.ndarray):
        return grad @ weight.data.T, features.data.T @ grad, grad.sum(axis=0)

    return _record("linear", out, (features, weight, bias), backward_fn)


# =============================================================================
# ACTIVATIONS AND POOLING
# =============================================================================


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward_fn(grad: np.ndarray):
        return (grad * mask,)

    return _record("relu", out, (x,), backward_fn)


def max_pool2d(x: Tensor) -> Tensor:
    """2×2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    _require_ndim(x, 4, "max_pool2d input")
    batch, channels, height, width = x.shape
    out_h, out_w = height // 2, width // 2
    if out_h == 0 or out_w == 0:
        raise ShapeMismatchError(f"max_pool2d input too small: {x.shape}")

    cropped = x.data[:, :, : out_h * 2, : out_w * 2]
    blocks = (
        cropped.reshape(batch, channels, out_h, 2, out_w, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h, out_w, 4)
    )
    winners = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, winners[..., None], axis=-1)[..., 0]

    def backward_fn(grad: np.ndarray):
        grad_blocks = np.zeros_like(blocks)
        np.put_along_axis(grad_blocks, winners[..., None], grad[..., None], axis=-1)
        grad_cropped = (
            grad_blocks.reshape(batch, channels, out_h, out_w, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, channels, out_h * 2, out_w * 2)
        )
        grad_x = np.zeros_like(x.data)
        grad_x[:, :, : out_h * 2, : out_w * 2] = grad_cropped
        return (grad_x,)

    return _record("max_pool2d", out, (x,), backward_fn)


def mean_pool(x: Tensor) -> Tensor:
    """Global spatial mean: [B, C, H, W] -> [B, C]."""
    _require_ndim(x, 4, "mean_pool input")
    area = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward_fn(grad: np.ndarray):
        return (np.broadcast_to(grad[:, :, None, None] / area, x.shape).copy(),)

    return _record("mean_pool", out, (x,), backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(tuple(shape))

    def backward_fn(grad: np.ndarray):
        return (grad.reshape(x.shape),)

    return _record("reshape", out, (x,), backward_fn)


def flatten(x: Tensor) -> Tensor:
    """[B, ...] -> [B, prod(...)]"""
    return reshape(x, (x.shape[0], -1))


# =============================================================================
# ELEMENTWISE
# =============================================================================


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: object, b: object) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    out = a.data + b.data

    def backward_fn(grad: np.ndarray):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _record("add", out, (a, b), backward_fn)


def sub(a: object, b: object) -> Tensor:
    """Elementwise difference with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    out = a.data - b.data

    def backward_fn(grad: np.ndarray):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return _record("sub", out, (a, b), backward_fn)


def mul(a: object, b: object) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    out = a.data * b.data

    def backward_fn(grad: np.ndarray):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _record("mul", out, (a, b), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a Python scalar."""
    factor = float(factor)
    out = x.data * factor

    def backward_fn(grad: np.ndarray):
        return (grad * factor,)

    return _record("scale", out, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    """Natural log; inputs must be strictly positive."""
    if np.any(x.data <= 0):
        raise ValueError("log of a non-positive value")
    out = np.log(x.data)

    def backward_fn(grad: np.ndarray):
        return (grad / x.data,)

    return _record("log", out, (x,), backward_fn)


# =============================================================================
# REDUCTIONS
# =============================================================================


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis: Axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape).copy()
    axes = (axis,) if isinstance(axis, int) else axis
    axes = tuple(a % len(shape) for a in axes)
    return np.broadcast_to(np.expand_dims(grad, axes), shape).copy()


def sum(x: Tensor, axis: Axis = None) -> Tensor:  # noqa: A001 - op-set name
    out = np.asarray(x.data.sum(axis=axis))

    def backward_fn(grad: np.ndarray):
        return (_expand_reduced(grad, x.shape, axis),)

    return _record("sum", out, (x,), backward_fn)


def mean(x: Tensor, axis: Axis = None) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis))
    count = x.size // max(out.size, 1)

    def backward_fn(grad: np.ndarray):
        return (_expand_reduced(grad, x.shape, axis) / count,)

    return _record("mean", out, (x,), backward_fn)


# =============================================================================
# SOFTMAX
# =============================================================================


def _check_gamma(gamma: float) -> float:
    if not gamma > 0:
        raise ValueError(f"softmax temperature gamma must be positive, got {gamma}")
    return float(gamma)


def _stable_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_temp(logits: Tensor, gamma: float = 1.0) -> Tensor:
    """
    Temperature softmax p_i = exp(z_i / γ) / Σ_j exp(z_j / γ) over the last axis.

    Raises:
        ValueError: If gamma is not positive
    """
    gamma = _check_gamma(gamma)
    probs = _stable_softmax(logits.data / gamma)

    def backward_fn(grad: np.ndarray):
        inner = (grad * probs).sum(axis=-1, keepdims=True)
        return (probs * (grad - inner) / gamma,)

    return _record("softmax_temp", probs, (logits,), backward_fn)


def log_softmax_temp(logits: Tensor, gamma: float = 1.0) -> Tensor:
    """log(softmax_temp(logits, γ)) fused through log-sum-exp."""
    gamma = _check_gamma(gamma)
    z = logits.data / gamma
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def backward_fn(grad: np.ndarray):
        total = grad.sum(axis=-1, keepdims=True)
        return ((grad - probs * total) / gamma,)

    return _record("log_softmax_temp", out, (logits,), backward_fn)


def mse(prediction: Tensor, target: object) -> Tensor:
    """Mean squared error, composed from sub, mul and mean."""
    diff = sub(prediction, target)
    return mean(mul(diff, diff))
