"""Tests of bilinear warping."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose

from featureflow.exceptions import ShapeMismatch
from featureflow.warp import bilinear_warp, bilinear_warp_backward


def _constant_flow(dx, dy, height, width):
    return np.stack((np.full((height, width), dx), np.full((height, width), dy)))


def test_zero_flow_is_identity(rng):
    feature = rng.normal(size=(3, 5, 7))
    assert_array_equal(bilinear_warp(feature, np.zeros((2, 5, 7))), feature)


def test_integer_shift_reads_right_neighbour(rng):
    feature = rng.normal(size=(2, 4, 5))
    warped = bilinear_warp(feature, _constant_flow(1.0, 0.0, 4, 5))
    assert_array_equal(warped[:, :, :-1], feature[:, :, 1:])
    assert_array_equal(warped[:, :, -1], 0.0)


def test_integer_shift_down(rng):
    feature = rng.normal(size=(2, 4, 5))
    warped = bilinear_warp(feature, _constant_flow(0.0, -2.0, 4, 5))
    assert_array_equal(warped[:, 2:], feature[:, :-2])
    assert_array_equal(warped[:, :2], 0.0)


def test_half_pixel_shift_interpolates():
    feature = np.array([[[0.0, 2.0, 4.0]]])
    warped = bilinear_warp(feature, _constant_flow(0.5, 0.0, 1, 3))
    assert_allclose(warped, [[[1.0, 3.0, 2.0]]])


def test_far_outside_samples_are_zero(rng):
    feature = rng.normal(size=(2, 3, 3))
    warped = bilinear_warp(feature, _constant_flow(10.0, -10.0, 3, 3))
    assert not warped.any()


def test_rejects_bad_flow_shapes(rng):
    feature = rng.normal(size=(2, 4, 4))

    with pytest.raises(ShapeMismatch):
        bilinear_warp(feature, np.zeros((3, 4, 4)))

    with pytest.raises(ShapeMismatch):
        bilinear_warp(feature, np.zeros((2, 4, 5)))


def test_backward_of_sum_at_zero_flow(rng):
    feature = rng.normal(size=(2, 4, 4))
    grad_feature, grad_flow = bilinear_warp_backward(
        feature, np.zeros((2, 4, 4)), np.ones_like(feature)
    )
    assert_array_equal(grad_feature, np.ones_like(feature))
    assert grad_flow.shape == (2, 4, 4)


def test_backward_flow_gradient_of_linear_ramp():
    # d/dx of a ramp with slope 3 sampled between lattice points
    ys, xs = np.mgrid[0:4, 0:6].astype(np.float64)
    feature = 3.0 * xs[None]
    flow = _constant_flow(0.25, 0.25, 4, 6)
    _, grad_flow = bilinear_warp_backward(feature, flow, np.ones_like(feature))
    assert_allclose(grad_flow[0, :3, :4], 3.0)
    assert_allclose(grad_flow[1, :3, :4], 0.0, atol=1e-12)


def test_backward_rejects_cotangent_shape(rng):
    feature = rng.normal(size=(2, 4, 4))

    with pytest.raises(ShapeMismatch):
        bilinear_warp_backward(feature, np.zeros((2, 4, 4)), np.ones((1, 4, 4)))
