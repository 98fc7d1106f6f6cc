"""Displacement correlation (cost volume) between two feature maps."""

from __future__ import annotations
from typing import Iterator, NamedTuple

import numpy as np

from featureflow.exceptions import InvalidConfig, ShapeMismatch
from featureflow.tensor import Tensor, check_same_shape


__all__ = ["CorrConfig", "correlation", "correlation_backward"]


class CorrConfig(NamedTuple):
    """Maximum displacement and neighbour stride, both in grid cells."""

    max_displacement: int = 10
    stride: int = 2

    def validate(self) -> CorrConfig:
        """Returns the config or raises InvalidConfig."""
        if self.stride < 1:
            raise InvalidConfig(f"Correlation stride must be >= 1, got {self.stride}.")

        if self.max_displacement < 0:
            raise InvalidConfig(
                f"Maximum displacement must be >= 0, got {self.max_displacement}."
            )

        if self.max_displacement % self.stride:
            raise InvalidConfig(
                f"Maximum displacement {self.max_displacement} "
                f"is not a multiple of the stride {self.stride}."
            )

        return self

    @property
    def side(self) -> int:
        """Returns the number of offsets per axis."""
        return 2 * self.max_displacement // self.stride + 1

    @property
    def channels(self) -> int:
        """Returns the number of output channels."""
        return self.side**2

    def displacements(self) -> Iterator[tuple[int, int]]:
        """Yields (dx, dy) in channel order: dy outer, dx inner, most negative first."""
        offsets = range(-self.max_displacement, self.max_displacement + 1, self.stride)

        for dy in offsets:
            for dx in offsets:
                yield dx, dy

    def channel_of(self, dx: int, dy: int) -> int:
        """Returns the output channel of a displacement."""
        return (
            (dy + self.max_displacement) // self.stride * self.side
            + (dx + self.max_displacement) // self.stride
        )


def _window(d: int, dx: int, dy: int, height: int, width: int) -> tuple[slice, ...]:
    """Returns the slice of a d-padded map displaced by (dx, dy)."""

    return slice(None), slice(d + dy, d + dy + height), slice(d + dx, d + dx + width)


def correlation(f_i: Tensor, f_j: Tensor, cfg: CorrConfig) -> Tensor:
    """Returns the channel-normalised dot products of f_i(p) and f_j(p + d)."""

    check_same_shape("correlation", f_i, f_j)
    cfg.validate()
    channels, height, width = f_i.shape
    d = cfg.max_displacement
    padded = np.pad(f_j, ((0, 0), (d, d), (d, d)))
    output = np.empty((cfg.channels, height, width))

    for k, (dx, dy) in enumerate(cfg.displacements()):
        output[k] = (f_i * padded[_window(d, dx, dy, height, width)]).sum(axis=0)

    output /= channels
    return output


def correlation_backward(
    f_i: Tensor, f_j: Tensor, cfg: CorrConfig, grad_out: Tensor
) -> tuple[Tensor, Tensor]:
    """Returns the gradients w.r.t. both feature maps."""

    check_same_shape("correlation", f_i, f_j)
    channels, height, width = f_i.shape
    expected = (cfg.validate().channels, height, width)

    if grad_out.shape != expected:
        raise ShapeMismatch("correlation_backward", expected, grad_out.shape)

    d = cfg.max_displacement
    padded = np.pad(f_j, ((0, 0), (d, d), (d, d)))
    grad_i = np.zeros_like(f_i)
    grad_padded = np.zeros_like(padded)

    for k, (dx, dy) in enumerate(cfg.displacements()):
        window = _window(d, dx, dy, height, width)
        weight = grad_out[k] / channels
        grad_i += weight * padded[window]
        grad_padded[window] += weight * f_i

    return grad_i, np.ascontiguousarray(grad_padded[:, d : d + height, d : d + width])
