"""Tests of the dense tensor primitives."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose

from featureflow.exceptions import ShapeMismatch
from featureflow.tensor import (
    Param,
    add_backward,
    add_elementwise,
    as_tensor,
    concat_backward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    glorot_uniform,
    relu,
    relu_backward,
    sgd_step,
    zero_grads,
)


def _direct_conv(input, weights, bias, pad, stride):
    """Naive summation over every output position and kernel tap."""
    out_channels, in_channels, kh, kw = weights.shape
    padded = np.pad(input, ((0, 0), (pad, pad), (pad, pad)))
    height = conv_output_size(input.shape[1], kh, pad, stride)
    width = conv_output_size(input.shape[2], kw, pad, stride)
    output = np.zeros((out_channels, height, width))

    for o in range(out_channels):
        for y in range(height):
            for x in range(width):
                total = bias[o, 0, 0, 0]

                for c in range(in_channels):
                    for ky in range(kh):
                        for kx in range(kw):
                            total += (
                                weights[o, c, ky, kx]
                                * padded[c, y * stride + ky, x * stride + kx]
                            )

                output[o, y, x] = total

    return output


def test_as_tensor_rejects_rank_two():
    with pytest.raises(ShapeMismatch):
        as_tensor(np.zeros((3, 3)))


def test_param_starts_with_zero_grad():
    param = Param.create("w", np.ones((2, 1, 3, 3)))
    assert param.grad.shape == param.value.shape
    assert not param.grad.any()


def test_conv_scales_ones_with_pointwise_kernel():
    weights = Param.create("w", np.full((1, 1, 1, 1), 2.0))
    bias = Param.create("b", np.zeros((1, 1, 1, 1)))
    output = conv2d_forward(np.ones((1, 3, 3)), weights, bias)
    assert_array_equal(output, np.full((1, 3, 3), 2.0))


def test_conv_delta_response_is_kernel_footprint():
    delta = np.zeros((1, 3, 3))
    delta[0, 1, 1] = 1.0
    weights = Param.create("w", np.ones((1, 1, 3, 3)))
    bias = Param.create("b", np.zeros((1, 1, 1, 1)))
    assert_array_equal(conv2d_forward(delta, weights, bias, pad=1), np.ones((1, 3, 3)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_direct_summation(rng, stride):
    input = rng.normal(size=(4, 5, 5))
    weights = Param.create("w", rng.normal(size=(2, 4, 3, 3)))
    bias = Param.create("b", rng.normal(size=(2, 1, 1, 1)))
    output = conv2d_forward(input, weights, bias, pad=1, stride=stride)
    expected = _direct_conv(input, weights.value, bias.value, 1, stride)
    assert output.shape == expected.shape
    assert_allclose(output, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kernel", [1, 3, 5])
def test_conv_preserves_size_for_odd_kernels(rng, kernel):
    weights = Param.create("w", rng.normal(size=(3, 2, kernel, kernel)))
    bias = Param.create("b", np.zeros((3, 1, 1, 1)))
    assert conv2d_forward(rng.normal(size=(2, 7, 6)), weights, bias).shape == (3, 7, 6)


def test_conv_rejects_channel_mismatch(rng):
    weights = Param.create("w", rng.normal(size=(2, 4, 3, 3)))
    bias = Param.create("b", np.zeros((2, 1, 1, 1)))

    with pytest.raises(ShapeMismatch) as error:
        conv2d_forward(rng.normal(size=(3, 5, 5)), weights, bias)

    assert error.value.actual == (3, 5, 5)


def test_conv_backward_zero_cotangent(rng):
    input = rng.normal(size=(2, 4, 4))
    weights = Param.create("w", rng.normal(size=(3, 2, 3, 3)))
    bias = Param.create("b", np.zeros((3, 1, 1, 1)))
    grad = conv2d_backward(input, weights, bias, np.zeros((3, 4, 4)))
    assert not grad.any()
    assert not weights.grad.any()
    assert not bias.grad.any()


def test_conv_backward_weight_grad_of_output_sum():
    input = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    weights = Param.create("w", np.full((1, 1, 1, 1), 0.5))
    bias = Param.create("b", np.zeros((1, 1, 1, 1)))
    conv2d_backward(input, weights, bias, np.ones((1, 2, 2)))
    assert weights.grad[0, 0, 0, 0] == 10.0
    assert bias.grad[0, 0, 0, 0] == 4.0


def test_conv_backward_accumulates(rng):
    input = rng.normal(size=(2, 4, 4))
    weights = Param.create("w", rng.normal(size=(3, 2, 3, 3)))
    bias = Param.create("b", np.zeros((3, 1, 1, 1)))
    grad_out = rng.normal(size=(3, 4, 4))
    conv2d_backward(input, weights, bias, grad_out)
    once = weights.grad.copy()
    conv2d_backward(input, weights, bias, grad_out)
    assert_array_equal(weights.grad, 2.0 * once)


def test_conv_backward_rejects_wrong_cotangent(rng):
    weights = Param.create("w", rng.normal(size=(3, 2, 3, 3)))
    bias = Param.create("b", np.zeros((3, 1, 1, 1)))

    with pytest.raises(ShapeMismatch):
        conv2d_backward(rng.normal(size=(2, 4, 4)), weights, bias, np.zeros((3, 5, 4)))


def test_concat_puts_first_channels_first(rng):
    a = rng.normal(size=(2, 3, 3))
    b = rng.normal(size=(3, 3, 3))
    joined = concat_channels(a, b)
    assert joined.shape == (5, 3, 3)
    left, right = concat_backward(joined, 2)
    assert_array_equal(left, a)
    assert_array_equal(right, b)


def test_concat_rejects_spatial_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        concat_channels(rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 4)))


def test_add_identity_and_backward(rng):
    x = rng.normal(size=(2, 3, 3))
    assert_array_equal(add_elementwise(x, np.zeros_like(x)), x)
    grad_a, grad_b = add_backward(x)
    assert_array_equal(grad_a, x)
    assert_array_equal(grad_b, x)

    with pytest.raises(ShapeMismatch):
        add_elementwise(x, np.zeros((2, 3, 4)))


def test_relu_and_mask():
    a = np.array([[[-1.0, 0.0, 2.0]]])
    assert_array_equal(relu(a), [[[0.0, 0.0, 2.0]]])
    assert_array_equal(relu_backward(a, np.ones_like(a)), [[[0.0, 0.0, 1.0]]])


def test_glorot_limits(rng):
    weights = glorot_uniform(rng, (4, 2, 3, 3))
    assert np.abs(weights).max() <= np.sqrt(6.0 / 54.0)
    scaled = glorot_uniform(np.random.default_rng(42), (4, 2, 3, 3), scale=0.1)
    assert_allclose(scaled, 0.1 * weights)


def test_sgd_step_definition():
    param = Param.create("w", np.ones((1, 1, 1, 1)))
    param.grad[...] = 2.0
    sgd_step([param], 0.1)
    assert param.value[0, 0, 0, 0] == pytest.approx(0.8)
    assert param.grad[0, 0, 0, 0] == 2.0


def test_sgd_step_zero_rate_keeps_values(rng):
    param = Param.create("w", rng.normal(size=(2, 2, 1, 1)))
    before = param.value.copy()
    param.grad[...] = 5.0
    sgd_step([param], 0.0)
    assert_array_equal(param.value, before)


def test_two_steps_on_square():
    param = Param.create("x", np.ones((1, 1, 1, 1)))

    for _ in range(2):
        zero_grads([param])
        param.grad[...] = 2.0 * param.value
        sgd_step([param], 0.1)

    assert param.value[0, 0, 0, 0] == pytest.approx(0.64)
