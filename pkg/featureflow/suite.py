"""Finite-difference gradient suite over every differentiable operation."""

from __future__ import annotations
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from featureflow.aggregate import AggregationInput, aggregate, aggregate_backward
from featureflow.correlation import CorrConfig, correlation, correlation_backward
from featureflow.exceptions import InvalidConfig
from featureflow.gradcheck import STEP, grad_check
from featureflow.iff import IffConfig, IffModule
from featureflow.layers import EmbeddedBlock
from featureflow.logging import LOGGER
from featureflow.tensor import (
    Param,
    add_backward,
    add_elementwise,
    concat_backward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    relu,
    relu_backward,
)
from featureflow.trl import TrlConfig, trl_backward, trl_forward
from featureflow.warp import bilinear_warp, bilinear_warp_backward


__all__ = [
    "PRIMITIVE_TOLERANCE",
    "GRAPH_TOLERANCE",
    "KINK_MARGIN",
    "CheckResult",
    "CHECKS",
    "kink_distance",
    "run_suite",
]


PRIMITIVE_TOLERANCE = 1e-6
GRAPH_TOLERANCE = 1e-4
GRAPH_SAMPLES = 24
# Central differences with STEP never cross a kink this far away.
KINK_MARGIN = 100 * STEP
MAX_DRAWS = 1000


class CheckResult(NamedTuple):
    """Outcome of one check on one seed."""

    name: str
    seed: int
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        """Checks the error against the tolerance."""
        return self.error < self.tolerance


def _half_square(tensor: np.ndarray) -> float:
    """Returns half the squared norm, whose gradient is the tensor itself."""
    return 0.5 * float((tensor * tensor).sum())


def _off_lattice_flow(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Returns a flow whose samples stay clear of integer coordinates."""

    return rng.integers(-2, 3, size=(2, height, width)) + rng.uniform(
        0.1, 0.9, size=(2, height, width)
    )


def kink_distance(relu_inputs: Sequence[np.ndarray], flow=None) -> float:
    """Returns how close any ReLU input or flow value lies to a kink.

    ReLU bends at zero and bilinear sampling at integer flow values.
    """

    distances = [float(np.abs(tensor).min()) for tensor in relu_inputs]

    if flow is not None:
        distances.append(float(np.abs(flow - np.round(flow)).min()))

    return min(distances, default=np.inf)


def _randomize_biases(rng: np.random.Generator, params: Iterable[Param]) -> None:
    """Draws every bias from N(0, 0.25)."""

    for param in params:
        if param.name.endswith(".bias"):
            param.value[...] = rng.normal(scale=0.5, size=param.value.shape)


def _conv(rng: np.random.Generator, stride: int = 1) -> float:
    """Checks a 3x3 convolution w.r.t. input, weights and bias."""

    input = rng.normal(size=(4, 5, 5))
    weights = Param.create("w", rng.normal(size=(2, 4, 3, 3)))
    bias = Param.create("b", rng.normal(size=(2, 1, 1, 1)))

    def loss() -> float:
        return _half_square(conv2d_forward(input, weights, bias, stride=stride))

    output = conv2d_forward(input, weights, bias, stride=stride)
    grad_input = conv2d_backward(input, weights, bias, output, stride=stride)
    return grad_check(
        loss, [input, weights.value, bias.value], [grad_input, weights.grad, bias.grad]
    )


def _concat(rng: np.random.Generator) -> float:
    """Checks the channel concatenation."""

    a = rng.normal(size=(2, 4, 4))
    b = rng.normal(size=(3, 4, 4))
    grads = concat_backward(concat_channels(a, b), 2)
    return grad_check(lambda: _half_square(concat_channels(a, b)), [a, b], grads)


def _add(rng: np.random.Generator) -> float:
    """Checks the element-wise addition."""

    a = rng.normal(size=(3, 4, 4))
    b = rng.normal(size=(3, 4, 4))
    grads = add_backward(add_elementwise(a, b))
    return grad_check(lambda: _half_square(add_elementwise(a, b)), [a, b], grads)


def _relu(rng: np.random.Generator) -> float:
    """Checks ReLU on inputs at least 0.1 away from zero."""

    a = rng.choice((-1.0, 1.0), size=(3, 4, 4)) * rng.uniform(0.1, 1.0, size=(3, 4, 4))
    grad = relu_backward(a, relu(a))
    return grad_check(lambda: _half_square(relu(a)), [a], [grad])


def _warp(rng: np.random.Generator) -> float:
    """Checks the bilinear warp w.r.t. feature and flow."""

    feature = rng.normal(size=(3, 6, 6))
    flow = _off_lattice_flow(rng, 6, 6)
    grads = bilinear_warp_backward(feature, flow, bilinear_warp(feature, flow))
    return grad_check(
        lambda: _half_square(bilinear_warp(feature, flow)), [feature, flow], grads
    )


def _correlation(rng: np.random.Generator) -> float:
    """Checks the correlation w.r.t. both feature maps."""

    cfg = CorrConfig(2, 1)
    f_i = rng.normal(size=(4, 6, 6))
    f_j = rng.normal(size=(4, 6, 6))
    grads = correlation_backward(f_i, f_j, cfg, correlation(f_i, f_j, cfg))
    return grad_check(
        lambda: _half_square(correlation(f_i, f_j, cfg)), [f_i, f_j], grads
    )


def _trl(rng: np.random.Generator) -> float:
    """Checks the transformation residual loss w.r.t. features and flow."""

    cfg = TrlConfig()
    f_i = rng.normal(size=(3, 6, 6))
    f_j = rng.normal(size=(3, 6, 6))
    flow = _off_lattice_flow(rng, 6, 6)
    grads = trl_backward(f_i, f_j, flow, cfg)
    return grad_check(lambda: trl_forward(f_i, f_j, flow, cfg), [f_i, f_j, flow], grads)


def _aggregate(rng: np.random.Generator) -> float:
    """Checks the adaptive aggregation w.r.t. every member."""

    members = [rng.normal(size=(4, 5, 5)) for _ in range(3)]
    input = AggregationInput(members[0], tuple(members[1:]))
    grad_current, grad_neighbors = aggregate_backward(input, aggregate(input))
    return grad_check(
        lambda: _half_square(aggregate(input)), members, [grad_current, *grad_neighbors]
    )


def _clear_of_kinks(draw: Callable[[], tuple], distance: Callable[[tuple], float]):
    """Redraws an instance until it keeps KINK_MARGIN from every kink."""

    for _ in range(MAX_DRAWS):
        instance = draw()

        if distance(instance) >= KINK_MARGIN:
            return instance

    raise InvalidConfig(f"No instance clear of kinks within {MAX_DRAWS} draws.")


def _block_kink_distance(instance: tuple[EmbeddedBlock, np.ndarray]) -> float:
    """Returns the kink distance of one block evaluation."""

    block, input = instance
    return kink_distance(block.forward(input)[1].relu_inputs)


def _embedded_block(rng: np.random.Generator, out_channels: int = 3) -> float:
    """Checks an embedded block, projecting the skip unless widths agree."""

    def draw() -> tuple[EmbeddedBlock, np.ndarray]:
        block = EmbeddedBlock.build(rng, "eb", 4, out_channels)
        _randomize_biases(rng, (p for layer in block.layers() for p in layer.params()))
        return block, rng.normal(size=(4, 6, 6))

    block, input = _clear_of_kinks(draw, _block_kink_distance)
    params = [param for layer in block.layers() for param in layer.params()]

    def loss() -> float:
        return _half_square(block.forward(input)[0]) / input.size

    output, trace = block.forward(input)
    grad_input = block.backward(trace, output / input.size)
    return grad_check(
        loss,
        [input, *(param.value for param in params)],
        [grad_input, *(param.grad for param in params)],
        samples=GRAPH_SAMPLES,
        rng=rng,
    )


def _iff_kink_distance(instance: tuple[IffModule, np.ndarray, np.ndarray]) -> float:
    """Returns the kink distance of one IFF forward pass."""

    module, f_i, f_j = instance
    return kink_distance(module.relu_inputs(f_i, f_j), module.forward(f_i, f_j))


def _iff_trl(variant: str) -> Callable[[np.random.Generator], float]:
    """Returns a check of the IFF graph followed by the loss."""

    def check(rng: np.random.Generator) -> float:
        def draw() -> tuple[IffModule, np.ndarray, np.ndarray]:
            module = IffModule.build(IffConfig.toy(variant), int(rng.integers(2**31)))
            _randomize_biases(rng, module.params)
            # Fractional flow offsets keep the warp off the integer lattice.
            module["head"].bias.value[:, 0, 0, 0] = rng.uniform(0.2, 0.8, size=2)
            return module, rng.normal(size=(8, 6, 6)), rng.normal(size=(8, 6, 6))

        module, f_i, f_j = _clear_of_kinks(draw, _iff_kink_distance)
        cfg = TrlConfig()

        def loss() -> float:
            return trl_forward(f_i, f_j, module.forward(f_i, f_j), cfg)

        flow = module.forward(f_i, f_j)
        grad_i, grad_j, grad_flow = trl_backward(f_i, f_j, flow, cfg)
        module_i, module_j = module.forward_backward(f_i, f_j, grad_flow)
        return grad_check(
            loss,
            [f_i, f_j, *(param.value for param in module.params)],
            [
                grad_i + module_i,
                grad_j + module_j,
                *(param.grad for param in module.params),
            ],
            samples=GRAPH_SAMPLES,
            rng=rng,
        )

    return check


CHECKS: dict[str, tuple[Callable[[np.random.Generator], float], float]] = {
    "conv2d": (_conv, PRIMITIVE_TOLERANCE),
    "conv2d-stride2": (lambda rng: _conv(rng, 2), PRIMITIVE_TOLERANCE),
    "concat": (_concat, PRIMITIVE_TOLERANCE),
    "add": (_add, PRIMITIVE_TOLERANCE),
    "relu": (_relu, PRIMITIVE_TOLERANCE),
    "warp": (_warp, PRIMITIVE_TOLERANCE),
    "correlation": (_correlation, PRIMITIVE_TOLERANCE),
    "trl": (_trl, PRIMITIVE_TOLERANCE),
    "aggregate": (_aggregate, PRIMITIVE_TOLERANCE),
    "embedded-block": (_embedded_block, GRAPH_TOLERANCE),
    "embedded-block-identity": (lambda rng: _embedded_block(rng, 4), GRAPH_TOLERANCE),
    "iff-basic-trl": (_iff_trl("basic"), GRAPH_TOLERANCE),
    "iff-advanced-trl": (_iff_trl("advanced"), GRAPH_TOLERANCE),
}


def run_suite(
    seeds: Iterable[int] = range(20),
    *,
    names: Iterable[str] | None = None,
    graph_tolerance: float = GRAPH_TOLERANCE,
) -> list[CheckResult]:
    """Runs the selected checks for every seed."""

    results = []

    for name in CHECKS if names is None else names:
        check, tolerance = CHECKS[name]

        if tolerance == GRAPH_TOLERANCE:
            tolerance = graph_tolerance

        for seed in seeds:
            error = check(np.random.default_rng(seed))
            result = CheckResult(name, seed, error, tolerance)
            LOGGER.debug("%s seed %d: %.3e", name, seed, result.error)
            results.append(result)

        worst = max(result.error for result in results if result.name == name)
        LOGGER.info(
            "%s: worst relative error %.3e (tolerance %.0e).", name, worst, tolerance
        )

    return results
