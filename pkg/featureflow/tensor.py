"""Dense feature tensors and the differentiable primitives of the flow graphs.

A tensor is a C-contiguous float64 array of shape (channels, height, width),
i.e. a flat buffer in (c, y, x) order. Convolution weights have the shape
(out_channels, in_channels, kh, kw) and biases (out_channels, 1, 1, 1), so
that every parameter is four-dimensional.
"""

from __future__ import annotations
from typing import Iterable, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray

from featureflow.exceptions import ShapeMismatch


__all__ = [
    "Tensor",
    "Param",
    "as_tensor",
    "check_same_shape",
    "conv_output_size",
    "conv2d_forward",
    "conv2d_backward",
    "concat_channels",
    "concat_backward",
    "add_elementwise",
    "add_backward",
    "relu",
    "relu_backward",
    "glorot_uniform",
    "zero_grads",
    "sgd_step",
]


Tensor = NDArray[np.float64]


class Param(NamedTuple):
    """A learnable weight array and its gradient accumulator."""

    name: str
    value: NDArray[np.float64]
    grad: NDArray[np.float64]

    @classmethod
    def create(cls, name: str, value: ArrayLike) -> Param:
        """Creates a parameter with a zeroed gradient."""
        value = np.array(value, dtype=np.float64)
        return cls(name, value, np.zeros_like(value))

    @property
    def size(self) -> int:
        """Returns the number of scalar weights."""
        return self.value.size

    def zero_grad(self) -> None:
        """Resets the gradient accumulator."""
        self.grad.fill(0.0)


def as_tensor(data: ArrayLike, *, name: str = "tensor") -> Tensor:
    """Returns the data as a contiguous rank-3 float64 array."""

    array = np.ascontiguousarray(data, dtype=np.float64)

    if array.ndim != 3:
        raise ShapeMismatch(name, ("channels", "height", "width"), array.shape)

    return array


def check_same_shape(operation: str, a: Tensor, b: Tensor) -> None:
    """Raises ShapeMismatch unless both arrays have the same shape."""

    if a.shape != b.shape:
        raise ShapeMismatch(operation, a.shape, b.shape)


def conv_output_size(size: int, kernel: int, pad: int, stride: int) -> int:
    """Returns the output extent of a convolution along one axis."""

    return (size + 2 * pad - kernel) // stride + 1


def _columns(padded: Tensor, kh: int, kw: int, stride: int) -> NDArray:
    """Returns the (C, Ho, Wo, kh, kw) window view of a padded input."""

    return sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]


def _pad(input: Tensor, pad: int) -> Tensor:
    """Zero-pads both spatial axes."""

    return np.pad(input, ((0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(
    input: Tensor,
    weights: Param,
    bias: Param,
    *,
    pad: int | None = None,
    stride: int = 1,
) -> Tensor:
    """Convolves the input with the weights and adds the bias.

    The padding defaults to kh // 2, which preserves the spatial size of odd
    kernels at stride one.
    """

    out_channels, in_channels, kh, kw = weights.value.shape

    if input.ndim != 3 or input.shape[0] != in_channels:
        raise ShapeMismatch(
            f"conv2d {weights.name}", (in_channels, "height", "width"), input.shape
        )

    pad = kh // 2 if pad is None else pad
    columns = _columns(_pad(input, pad), kh, kw, stride)
    output = np.tensordot(weights.value, columns, axes=([1, 2, 3], [0, 3, 4]))
    output += bias.value.reshape(out_channels, 1, 1)
    return np.ascontiguousarray(output)


def conv2d_backward(
    input: Tensor,
    weights: Param,
    bias: Param,
    grad_out: Tensor,
    *,
    pad: int | None = None,
    stride: int = 1,
) -> Tensor:
    """Accumulates the weight and bias gradients and returns the input gradient."""

    out_channels, in_channels, kh, kw = weights.value.shape

    if input.ndim != 3 or input.shape[0] != in_channels:
        raise ShapeMismatch(
            f"conv2d {weights.name}", (in_channels, "height", "width"), input.shape
        )

    pad = kh // 2 if pad is None else pad
    padded = _pad(input, pad)
    columns = _columns(padded, kh, kw, stride)
    expected = (out_channels, columns.shape[1], columns.shape[2])

    if grad_out.shape != expected:
        raise ShapeMismatch(f"conv2d_backward {weights.name}", expected, grad_out.shape)

    weights.grad[...] += np.tensordot(grad_out, columns, axes=([1, 2], [1, 2]))
    bias.grad[...] += grad_out.sum(axis=(1, 2)).reshape(bias.grad.shape)
    grad_padded = np.zeros_like(padded)
    height, width = expected[1:]

    for ky in range(kh):
        for kx in range(kw):
            grad_padded[
                :, ky : ky + stride * height : stride, kx : kx + stride * width : stride
            ] += np.tensordot(weights.value[:, :, ky, kx], grad_out, axes=([0], [0]))

    return np.ascontiguousarray(
        grad_padded[:, pad : pad + input.shape[1], pad : pad + input.shape[2]]
    )


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stacks b's channels behind a's."""

    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatch("concat_channels", a.shape[1:], b.shape[1:])

    return np.concatenate((a, b), axis=0)


def concat_backward(grad_out: Tensor, split: int) -> tuple[Tensor, Tensor]:
    """Splits the gradient of a concatenation at the given channel."""

    return grad_out[:split].copy(), grad_out[split:].copy()


def add_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """Adds two equally shaped tensors."""

    check_same_shape("add_elementwise", a, b)
    return a + b


def add_backward(grad_out: Tensor) -> tuple[Tensor, Tensor]:
    """Returns the gradients of both summands."""

    return grad_out.copy(), grad_out.copy()


def relu(a: Tensor) -> Tensor:
    """Clamps negative entries to zero."""

    return np.maximum(a, 0.0)


def relu_backward(a: Tensor, grad_out: Tensor) -> Tensor:
    """Passes the gradient where the forward input was positive."""

    check_same_shape("relu_backward", a, grad_out)
    return np.where(a > 0.0, grad_out, 0.0)


def glorot_uniform(
    rng: np.random.Generator, shape: tuple[int, int, int, int], *, scale: float = 1.0
) -> NDArray[np.float64]:
    """Draws conv weights uniformly from [-a, a], a = sqrt(6 / (fan_in + fan_out))."""

    out_channels, in_channels, kh, kw = shape
    limit = np.sqrt(6.0 / ((in_channels + out_channels) * kh * kw))
    return rng.uniform(-limit, limit, size=shape) * scale


def zero_grads(params: Iterable[Param]) -> None:
    """Resets the gradients of all parameters."""

    for param in params:
        param.zero_grad()


def sgd_step(params: Iterable[Param], lr: float) -> None:
    """Moves every parameter against its gradient."""

    for param in params:
        param.value[...] -= lr * param.grad
