"""Tests of adaptive feature aggregation."""

from math import e, exp

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from featureflow.aggregate import (
    AggregationInput,
    adaptive_weights,
    aggregate,
    aggregate_backward,
    align_and_aggregate,
)
from featureflow.exceptions import ShapeMismatch
from featureflow.iff import IffConfig, build


def _vectors(*vectors):
    """Turns feature vectors into 1 x 1 maps."""
    return [np.array(vector, dtype=np.float64)[:, None, None] for vector in vectors]


def test_without_neighbours_returns_current(rng):
    current = rng.normal(size=(3, 4, 4))
    input = AggregationInput.create(current)
    assert_array_equal(adaptive_weights(input), np.ones((1, 4, 4)))
    assert_array_equal(aggregate(input), current)


def test_identical_neighbour_halves_weights(rng):
    current = rng.normal(size=(3, 4, 4))
    input = AggregationInput.create(current, [current.copy()])
    assert_allclose(adaptive_weights(input), 0.5)
    assert_allclose(aggregate(input), current)


def test_orthogonal_neighbour():
    current, neighbor = _vectors([1.0, 0.0], [0.0, 1.0])
    weights = adaptive_weights(AggregationInput.create(current, [neighbor]))
    assert weights[0, 0, 0] == pytest.approx(e / (e + 1))
    assert weights[1, 0, 0] == pytest.approx(1 / (e + 1))


def test_zero_vector_counts_as_orthogonal():
    current, neighbor = _vectors([1.0, 2.0], [0.0, 0.0])
    weights = adaptive_weights(AggregationInput.create(current, [neighbor]))
    assert weights[1, 0, 0] == pytest.approx(1 / (e + 1))
    assert np.isfinite(aggregate(AggregationInput.create(neighbor, [current]))).all()


def test_matches_per_position_formula(rng):
    current = rng.normal(size=(4, 3, 3))
    neighbors = [rng.normal(size=(4, 3, 3)) for _ in range(2)]
    output = aggregate(AggregationInput.create(current, neighbors))

    for y in range(3):
        for x in range(3):
            members = [current[:, y, x]] + [n[:, y, x] for n in neighbors]
            scores = [1.0] + [
                float(
                    members[0] @ member
                    / np.linalg.norm(members[0])
                    / np.linalg.norm(member)
                )
                for member in members[1:]
            ]
            weights = [exp(score) for score in scores]
            expected = sum(w * m for w, m in zip(weights, members)) / sum(weights)
            assert_allclose(output[:, y, x], expected, rtol=0, atol=1e-12)


def test_output_is_a_convex_combination(rng):
    current = rng.normal(size=(3, 5, 5))
    neighbors = [rng.normal(size=(3, 5, 5)) for _ in range(3)]
    input = AggregationInput.create(current, neighbors)
    weights = adaptive_weights(input)
    assert_allclose(weights.sum(axis=0), 1.0)
    assert (weights > 0).all()
    output = aggregate(input)
    members = input.members
    assert (output <= members.max(axis=0) + 1e-12).all()
    assert (output >= members.min(axis=0) - 1e-12).all()


def test_neighbour_order_does_not_matter(rng):
    current = rng.normal(size=(3, 4, 4))
    a, b = rng.normal(size=(2, 3, 4, 4))
    forward = aggregate(AggregationInput.create(current, [a, b]))
    reverse = aggregate(AggregationInput.create(current, [b, a]))
    assert_allclose(forward, reverse, rtol=0, atol=1e-12)


def test_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        AggregationInput.create(
            rng.normal(size=(3, 4, 4)), [rng.normal(size=(2, 4, 4))]
        )

    input = AggregationInput.create(rng.normal(size=(3, 4, 4)))

    with pytest.raises(ShapeMismatch):
        aggregate_backward(input, np.ones((3, 4, 5)))


def test_backward_without_neighbours_passes_gradient(rng):
    current = rng.normal(size=(3, 4, 4))
    grad_out = rng.normal(size=(3, 4, 4))
    grad_current, grads = aggregate_backward(AggregationInput.create(current), grad_out)
    assert_array_equal(grad_current, grad_out)
    assert grads == []


def test_align_and_aggregate(rng):
    module = build(IffConfig.toy(), seed=1)
    current = rng.normal(size=(8, 6, 6))
    neighbors = [rng.normal(size=(8, 6, 6)) for _ in range(2)]
    assert align_and_aggregate(module, current, neighbors).shape == (8, 6, 6)
    assert_array_equal(align_and_aggregate(module, current, []), current)
