"""Adaptive weighted fusion of current and warped neighbour features."""

from __future__ import annotations
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from featureflow.exceptions import ShapeMismatch
from featureflow.iff import IffModule
from featureflow.tensor import Tensor, as_tensor, check_same_shape
from featureflow.warp import bilinear_warp


__all__ = [
    "AggregationInput",
    "adaptive_weights",
    "aggregate",
    "aggregate_backward",
    "align_and_aggregate",
]


class AggregationInput(NamedTuple):
    """The current feature map and the neighbour maps warped onto it."""

    current: Tensor
    warped_neighbors: tuple[Tensor, ...] = ()

    @classmethod
    def create(
        cls, current: Tensor, warped_neighbors: Sequence[Tensor] = ()
    ) -> AggregationInput:
        """Validates the shapes and creates an input."""
        current = as_tensor(current, name="current")

        for neighbor in warped_neighbors:
            check_same_shape("aggregate", current, neighbor)

        return cls(current, tuple(warped_neighbors))

    @property
    def members(self) -> NDArray[np.float64]:
        """Returns the stacked members, current first."""
        for neighbor in self.warped_neighbors:
            if neighbor.shape != self.current.shape:
                raise ShapeMismatch("aggregate", self.current.shape, neighbor.shape)

        return np.stack((self.current, *self.warped_neighbors))


class _Similarity(NamedTuple):
    norms: NDArray[np.float64]
    valid: NDArray[np.bool_]
    cosine: NDArray[np.float64]


def _similarity(members: NDArray[np.float64]) -> _Similarity:
    """Cosine of every member with the current frame, zero for zero vectors."""

    norms = np.sqrt((members * members).sum(axis=1))
    dots = (members * members[0]).sum(axis=1)
    denominator = norms * norms[0]
    valid = denominator > 0.0
    cosine = np.divide(dots, denominator, out=np.zeros_like(dots), where=valid)
    cosine[0] = 1.0
    return _Similarity(norms, valid, cosine)


def _softmax(scores: NDArray[np.float64]) -> NDArray[np.float64]:
    """Normalises the scores over the member axis."""
    exp = np.exp(scores - scores.max(axis=0))
    return exp / exp.sum(axis=0)


def adaptive_weights(input: AggregationInput) -> NDArray[np.float64]:
    """Returns one weight map per member, (1 + neighbours) x H x W."""

    return _softmax(_similarity(input.members).cosine)


def aggregate(input: AggregationInput) -> Tensor:
    """Returns the per-position weighted sum of all members."""

    members = input.members
    weights = _softmax(_similarity(members).cosine)
    return (weights[:, None] * members).sum(axis=0)


def aggregate_backward(
    input: AggregationInput, grad_out: Tensor
) -> tuple[Tensor, list[Tensor]]:
    """Returns the gradients w.r.t. the current map and each neighbour."""

    members = input.members
    check_same_shape("aggregate_backward", input.current, grad_out)
    similarity = _similarity(members)
    weights = _softmax(similarity.cosine)
    grads = weights[:, None] * grad_out
    sensitivity = (grad_out * members).sum(axis=1)
    grad_scores = weights * (sensitivity - (weights * sensitivity).sum(axis=0))
    current_norm = similarity.norms[0]

    for index in range(1, len(members)):
        valid = similarity.valid[index]
        norm = similarity.norms[index]
        cosine = similarity.cosine[index]
        scale = np.divide(
            grad_scores[index],
            norm * current_norm,
            out=np.zeros_like(norm),
            where=valid,
        )
        own = np.divide(
            grad_scores[index] * cosine,
            norm * norm,
            out=np.zeros_like(norm),
            where=valid,
        )
        other = np.divide(
            grad_scores[index] * cosine,
            current_norm * current_norm,
            out=np.zeros_like(norm),
            where=valid,
        )
        grads[index] += scale * members[0] - own * members[index]
        grads[0] += scale * members[index] - other * members[0]

    return grads[0], list(grads[1:])


def align_and_aggregate(
    module: IffModule, current: Tensor, neighbors: Sequence[Tensor]
) -> Tensor:
    """Warps each neighbour onto the current frame by its flow and fuses them."""

    warped = tuple(
        bilinear_warp(neighbor, module.forward(current, neighbor))
        for neighbor in neighbors
    )
    return aggregate(AggregationInput.create(current, warped))
