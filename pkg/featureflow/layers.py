"""Convolution layers and the embedded residual block."""

from __future__ import annotations
from typing import Iterator, NamedTuple

import numpy as np

from featureflow.tensor import (
    Param,
    Tensor,
    add_elementwise,
    conv2d_backward,
    conv2d_forward,
    glorot_uniform,
    relu,
    relu_backward,
)


__all__ = ["Conv2d", "BlockTrace", "EmbeddedBlock"]


class Conv2d(NamedTuple):
    """A stride-one, size-preserving convolution with bias."""

    weights: Param
    bias: Param

    @classmethod
    def build(
        cls,
        rng: np.random.Generator,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        *,
        scale: float = 1.0,
    ) -> Conv2d:
        """Creates a Glorot-initialised layer with zero bias."""
        shape = (out_channels, in_channels, kernel, kernel)
        return cls(
            Param.create(f"{name}.weight", glorot_uniform(rng, shape, scale=scale)),
            Param.create(f"{name}.bias", np.zeros((out_channels, 1, 1, 1))),
        )

    @property
    def in_channels(self) -> int:
        """Returns the number of input channels."""
        return self.weights.value.shape[1]

    @property
    def out_channels(self) -> int:
        """Returns the number of output channels."""
        return self.weights.value.shape[0]

    @property
    def kernel(self) -> int:
        """Returns the kernel's side length."""
        return self.weights.value.shape[2]

    def params(self) -> Iterator[Param]:
        """Yields the weights and the bias."""
        yield self.weights
        yield self.bias

    def multiply_accumulates(self, height: int, width: int) -> int:
        """Returns the multiply-accumulate count on a height x width map."""
        return self.weights.size * height * width

    def forward(self, input: Tensor) -> Tensor:
        """Applies the convolution."""
        return conv2d_forward(input, self.weights, self.bias)

    def backward(self, input: Tensor, grad_out: Tensor) -> Tensor:
        """Accumulates the parameter gradients and returns the input gradient."""
        return conv2d_backward(input, self.weights, self.bias, grad_out)


class BlockTrace(NamedTuple):
    """Intermediate values of one embedded block evaluation."""

    input: Tensor
    pre1: Tensor
    hidden1: Tensor
    pre2: Tensor
    hidden2: Tensor
    merged: Tensor

    @property
    def relu_inputs(self) -> tuple[Tensor, Tensor, Tensor]:
        """Returns the arguments of the three ReLUs."""
        return self.pre1, self.pre2, self.merged


class EmbeddedBlock:
    """Residual block of 1x1, 1x1 and 3x3 convolutions.

    The skip path is the identity when input and output widths agree and a
    learned 1x1 projection otherwise. ReLU follows the first two convolutions
    and the residual addition.
    """

    def __init__(
        self, conv1: Conv2d, conv2: Conv2d, conv3: Conv2d, proj: Conv2d | None
    ):
        self.conv1 = conv1
        self.conv2 = conv2
        self.conv3 = conv3
        self.proj = proj

    @classmethod
    def build(
        cls, rng: np.random.Generator, name: str, in_channels: int, out_channels: int
    ) -> EmbeddedBlock:
        """Creates a block mapping in_channels to out_channels."""
        return cls(
            Conv2d.build(rng, f"{name}.conv1", in_channels, out_channels, 1),
            Conv2d.build(rng, f"{name}.conv2", out_channels, out_channels, 1),
            Conv2d.build(rng, f"{name}.conv3", out_channels, out_channels, 3),
            None
            if in_channels == out_channels
            else Conv2d.build(rng, f"{name}.proj", in_channels, out_channels, 1),
        )

    @property
    def convs(self) -> tuple[Conv2d, Conv2d, Conv2d]:
        """Returns the three counted convolutions."""
        return self.conv1, self.conv2, self.conv3

    def layers(self) -> Iterator[Conv2d]:
        """Yields all convolutions including the skip projection."""
        yield from self.convs

        if self.proj is not None:
            yield self.proj

    def forward(self, input: Tensor) -> tuple[Tensor, BlockTrace]:
        """Returns the block output and the trace needed for backward."""
        pre1 = self.conv1.forward(input)
        hidden1 = relu(pre1)
        pre2 = self.conv2.forward(hidden1)
        hidden2 = relu(pre2)
        skip = input if self.proj is None else self.proj.forward(input)
        merged = add_elementwise(self.conv3.forward(hidden2), skip)
        return relu(merged), BlockTrace(input, pre1, hidden1, pre2, hidden2, merged)

    def backward(self, trace: BlockTrace, grad_out: Tensor) -> Tensor:
        """Accumulates parameter gradients and returns the input gradient."""
        grad_merged = relu_backward(trace.merged, grad_out)
        grad = self.conv3.backward(trace.hidden2, grad_merged)
        grad = self.conv2.backward(trace.hidden1, relu_backward(trace.pre2, grad))
        grad = self.conv1.backward(trace.input, relu_backward(trace.pre1, grad))

        if self.proj is None:
            return grad + grad_merged

        return grad + self.proj.backward(trace.input, grad_merged)
