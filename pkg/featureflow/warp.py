"""Bilinear feature warping by a flow map."""

from typing import Iterator, NamedTuple

import numpy as np
from numpy.typing import NDArray

from featureflow.exceptions import ShapeMismatch
from featureflow.tensor import Tensor


__all__ = ["FlowMap", "check_flow", "bilinear_warp", "bilinear_warp_backward"]


FlowMap = Tensor  # channel 0: dx (rightward), channel 1: dy (downward)


class _Corner(NamedTuple):
    """One of the four sampling neighbours of every output position."""

    y: NDArray[np.intp]
    x: NDArray[np.intp]
    weight: NDArray[np.float64]
    dweight_dx: NDArray[np.float64]
    dweight_dy: NDArray[np.float64]


def check_flow(feature: Tensor, flow: FlowMap) -> None:
    """Raises ShapeMismatch unless the flow fits the feature map."""

    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeMismatch("flow", (2, "height", "width"), flow.shape)

    if flow.shape[1:] != feature.shape[1:]:
        raise ShapeMismatch("flow", (2, *feature.shape[1:]), flow.shape)


def _corners(flow: FlowMap) -> Iterator[_Corner]:
    """Yields the sampling corners and their interpolation weights.

    A sample at an exact integer coordinate belongs to the cell to its
    lower right, whose weights determine the subgradient.
    """

    height, width = flow.shape[1:]
    ys, xs = np.mgrid[0:height, 0:width]
    sx = xs + flow[0]
    sy = ys + flow[1]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    yield _Corner(y0, x0, (1.0 - wy) * (1.0 - wx), wy - 1.0, wx - 1.0)
    yield _Corner(y0, x0 + 1, (1.0 - wy) * wx, 1.0 - wy, -wx)
    yield _Corner(y0 + 1, x0, wy * (1.0 - wx), -wy, 1.0 - wx)
    yield _Corner(y0 + 1, x0 + 1, wy * wx, wy, wx)


def _gather(feature: Tensor, corner: _Corner) -> tuple[Tensor, NDArray[np.bool_]]:
    """Returns the feature vectors at a corner, zero outside the grid."""

    height, width = feature.shape[1:]
    inside = (0 <= corner.y) & (corner.y < height)
    inside &= (0 <= corner.x) & (corner.x < width)
    rows = np.clip(corner.y, 0, height - 1)
    columns = np.clip(corner.x, 0, width - 1)
    values = feature[:, rows, columns]
    return np.where(inside, values, 0.0), inside


def bilinear_warp(feature: Tensor, flow: FlowMap) -> Tensor:
    """Samples every channel of the feature map at p + flow(p)."""

    check_flow(feature, flow)
    output = np.zeros_like(feature)

    for corner in _corners(flow):
        values, _ = _gather(feature, corner)
        output += corner.weight * values

    return output


def bilinear_warp_backward(
    feature: Tensor, flow: FlowMap, grad_out: Tensor
) -> tuple[Tensor, FlowMap]:
    """Returns the gradients w.r.t. the feature map and the flow."""

    check_flow(feature, flow)

    if grad_out.shape != feature.shape:
        raise ShapeMismatch("bilinear_warp_backward", feature.shape, grad_out.shape)

    channels, height, width = feature.shape
    grad_feature = np.zeros((channels, height * width))
    grad_flow = np.zeros_like(flow)

    for corner in _corners(flow):
        values, inside = _gather(feature, corner)
        index = corner.y[inside] * width + corner.x[inside]
        weighted = (grad_out * corner.weight)[:, inside]
        np.add.at(grad_feature, (slice(None), index), weighted)
        sensitivity = (grad_out * values).sum(axis=0)
        grad_flow[0] += sensitivity * corner.dweight_dx
        grad_flow[1] += sensitivity * corner.dweight_dy

    return grad_feature.reshape(feature.shape), grad_flow
