"""Tests of the finite-difference checker and the gradient suite."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose

from featureflow.exceptions import NonFiniteValue, ShapeMismatch
from featureflow.gradcheck import (
    STEP,
    grad_check,
    numerical_gradient,
    relative_error,
)
from featureflow.iff import IffConfig, IffModule
from featureflow.layers import EmbeddedBlock
from featureflow.suite import (
    CHECKS,
    GRAPH_TOLERANCE,
    KINK_MARGIN,
    kink_distance,
    run_suite,
)


def test_sum_has_unit_gradient(rng):
    x = rng.normal(size=(2, 3, 3))
    assert grad_check(lambda: x.sum(), [x], [np.ones_like(x)]) < 1e-10


def test_square_gradient():
    x = np.array([1.0, 2.0])
    assert_allclose(numerical_gradient(lambda: (x**2).sum(), x), [2.0, 4.0], atol=1e-8)
    assert grad_check(lambda: (x**2).sum(), [x], [2.0 * x]) < 1e-8


def test_wrong_gradient_is_detected():
    x = np.array([1.0, 2.0, 3.0])
    assert grad_check(lambda: (x**2).sum(), [x], [x]) > 0.1


def test_variable_is_restored(rng):
    x = rng.normal(size=(3, 4))
    before = x.copy()
    grad_check(lambda: np.sin(x).sum(), [x], [np.cos(x)], samples=5)
    assert_array_equal(x, before)


def test_non_finite_loss_raises():
    x = np.array([np.nan, 1.0])

    with pytest.raises(NonFiniteValue):
        grad_check(lambda: x.sum(), [x], [np.ones(2)])


def test_gradient_shape_must_match(rng):
    x = rng.normal(size=(3,))

    with pytest.raises(ShapeMismatch):
        grad_check(lambda: x.sum(), [x], [np.ones(4)])


def test_relative_error_scale():
    assert relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(
        1 / 101
    )
    assert relative_error(np.array([0.0]), np.array([1e-3])) == pytest.approx(1e-3)
    assert relative_error(np.array([]), np.array([])) == 0.0


@pytest.mark.parametrize("name", CHECKS)
def test_suite_passes_on_twenty_seeds(name):
    results = run_suite(range(20), names=[name])
    assert len(results) == 20
    failures = [result for result in results if not result.passed]
    assert not failures, failures


def test_graph_tolerance_override():
    results = run_suite([0], names=["embedded-block"], graph_tolerance=1.0)
    assert results[0].tolerance == 1.0
    results = run_suite([0], names=["embedded-block"])
    assert results[0].tolerance == GRAPH_TOLERANCE


def test_kink_distance():
    relu_inputs = [np.array([[-0.5, 0.25]]), np.array([[2.0, -0.125]])]
    assert kink_distance(relu_inputs) == 0.125
    assert kink_distance(relu_inputs, np.array([[1.75, -3.0625]])) == 0.0625
    assert kink_distance([]) == np.inf


def test_zero_biases_put_dead_positions_on_the_kink(rng):
    block = EmbeddedBlock.build(rng, "eb", 4, 3)
    block.conv1.weights.value[...] = -np.abs(block.conv1.weights.value)
    trace = block.forward(np.abs(rng.normal(size=(4, 5, 5))))[1]
    assert not trace.hidden1.any()
    assert kink_distance(trace.relu_inputs) == 0.0


@pytest.mark.parametrize("variant,count", [("basic", 2), ("advanced", 11)])
def test_iff_relu_inputs(variant, count, rng):
    module = IffModule.build(IffConfig.toy(variant), 3)
    f_i, f_j = rng.normal(size=(2, 8, 6, 6))
    relu_inputs = module.relu_inputs(f_i, f_j)
    assert len(relu_inputs) == count
    assert all(tensor.shape[1:] == (6, 6) for tensor in relu_inputs)


def test_kink_margin_exceeds_step():
    assert KINK_MARGIN >= 100 * STEP
