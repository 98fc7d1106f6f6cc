"""Central finite-difference gradient checking."""

from math import isfinite
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from featureflow.exceptions import NonFiniteValue, ShapeMismatch


__all__ = ["STEP", "numerical_gradient", "relative_error", "grad_check"]


STEP = 1e-5


def _evaluate(loss: Callable[[], float]) -> float:
    """Returns the loss or raises NonFiniteValue."""

    value = float(loss())

    if not isfinite(value):
        raise NonFiniteValue(f"Loss evaluated to {value}.")

    return value


def numerical_gradient(
    loss: Callable[[], float],
    variable: NDArray[np.float64],
    coordinates: Sequence[int] | None = None,
    *,
    step: float = STEP,
) -> NDArray[np.float64]:
    """Returns central differences of loss() w.r.t. the variable, perturbed in place.

    Coordinates index the flattened variable; the result holds one entry per
    coordinate (all of them by default).
    """

    flat = variable.reshape(-1)

    if not np.shares_memory(flat, variable):
        raise ValueError("Variable must be contiguous to be perturbed in place.")

    if coordinates is None:
        coordinates = range(flat.size)

    gradient = np.empty(len(coordinates))

    for position, index in enumerate(coordinates):
        original = flat[index]
        flat[index] = original + step
        upper = _evaluate(loss)
        flat[index] = original - step
        lower = _evaluate(loss)
        flat[index] = original
        gradient[position] = (upper - lower) / (2.0 * step)

    return gradient


def relative_error(analytic: NDArray, numeric: NDArray) -> float:
    """Returns max |a - n| / max(1, |a|, |n|)."""

    if analytic.size == 0:
        return 0.0

    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / scale).max())


def grad_check(
    loss: Callable[[], float],
    variables: Sequence[NDArray[np.float64]],
    gradients: Sequence[NDArray[np.float64]],
    *,
    step: float = STEP,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Returns the maximum relative error of analytic against numeric gradients.

    loss() must read the variables, which are perturbed in place and restored.
    With samples, only that many random coordinates per variable are checked.
    """

    _evaluate(loss)
    error = 0.0

    for variable, gradient in zip(variables, gradients, strict=True):
        if variable.shape != gradient.shape:
            raise ShapeMismatch("grad_check", variable.shape, gradient.shape)

        coordinates = None

        if samples is not None and samples < variable.size:
            rng = np.random.default_rng(0) if rng is None else rng
            coordinates = np.sort(
                rng.choice(variable.size, size=samples, replace=False)
            )

        numeric = numerical_gradient(loss, variable, coordinates, step=step)
        analytic = gradient.reshape(-1)

        if coordinates is not None:
            analytic = analytic[coordinates]

        error = max(error, relative_error(analytic, numeric))

    return error
