"""Transformation residual loss: smooth L1 between warped and current features."""

from __future__ import annotations
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike

from featureflow.config import CONFIG, TRL_DELTA, TRL_LAMBDA
from featureflow.exceptions import InvalidConfig
from featureflow.tensor import Tensor, check_same_shape
from featureflow.warp import FlowMap, bilinear_warp, bilinear_warp_backward, check_flow


__all__ = ["TrlConfig", "smooth_l1", "smooth_l1_grad", "trl_forward", "trl_backward"]


class TrlConfig(NamedTuple):
    """Trade-off weight (lambda), smooth L1 crossover and the feature stop-gradient."""

    trade_off: float = TRL_LAMBDA
    delta: float = TRL_DELTA
    stop_feature_gradient: bool = False

    @classmethod
    def from_config(cls) -> TrlConfig:
        """Reads the [trl] section with fallback on the defaults."""
        return cls(
            CONFIG.getfloat("trl", "lambda", fallback=TRL_LAMBDA),
            CONFIG.getfloat("trl", "delta", fallback=TRL_DELTA),
            CONFIG.getboolean("trl", "stop_feature_gradient", fallback=False),
        ).validate()

    def validate(self) -> TrlConfig:
        """Returns the config or raises InvalidConfig."""
        if not self.trade_off >= 0:
            raise InvalidConfig(f"TRL lambda must be >= 0, got {self.trade_off}.")

        if not self.delta > 0:
            raise InvalidConfig(f"Smooth L1 delta must be > 0, got {self.delta}.")

        return self


def smooth_l1(x: ArrayLike, delta: float = TRL_DELTA) -> np.ndarray | float:
    """Quadratic below delta, linear above, continuously differentiable."""

    x = np.asarray(x, dtype=np.float64)
    magnitude = np.abs(x)
    value = np.where(magnitude < delta, 0.5 * x * x / delta, magnitude - 0.5 * delta)
    return value if value.ndim else float(value)


def smooth_l1_grad(x: ArrayLike, delta: float = TRL_DELTA) -> np.ndarray | float:
    """Derivative of smooth_l1."""

    x = np.asarray(x, dtype=np.float64)
    value = np.where(np.abs(x) < delta, x / delta, np.sign(x))
    return value if value.ndim else float(value)


def _residual(f_i: Tensor, f_j: Tensor, flow: FlowMap) -> Tensor:
    """Returns the warped neighbour minus the current map."""

    check_same_shape("trl", f_i, f_j)
    check_flow(f_i, flow)
    return bilinear_warp(f_j, flow) - f_i


def trl_forward(
    f_i: Tensor, f_j: Tensor, flow: FlowMap, cfg: TrlConfig = TrlConfig()
) -> float:
    """Returns lambda times the mean smooth L1 residual over positions and channels."""

    mean = float(smooth_l1(_residual(f_i, f_j, flow), cfg.delta).mean())
    return cfg.trade_off * mean


def trl_backward(
    f_i: Tensor, f_j: Tensor, flow: FlowMap, cfg: TrlConfig = TrlConfig()
) -> tuple[Tensor, Tensor, FlowMap]:
    """Returns the loss gradients w.r.t. f_i, f_j and the flow."""

    residual = _residual(f_i, f_j, flow)
    grad_residual = cfg.trade_off * smooth_l1_grad(residual, cfg.delta) / residual.size
    grad_f_j, grad_flow = bilinear_warp_backward(f_j, flow, grad_residual)

    if cfg.stop_feature_gradient:
        return np.zeros_like(f_i), np.zeros_like(f_j), grad_flow

    return -grad_residual, grad_f_j, grad_flow
