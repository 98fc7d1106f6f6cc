"""In-network feature flow (IFF) estimation modules.

Two graphs map a current feature map F_i and a neighbour F_j to a flow map:

basic:    conv1x1(F_i) ++ conv3x3(F_j) -> conv3x3 -> flow
advanced: EB-1 (shared) on both maps -> correlation -> conv3x3
          EB-2 on EB-1(F_i)          -> add -> conv3x3 -> conv3x3 -> flow
"""

from __future__ import annotations
from typing import Iterator, Mapping, NamedTuple

import numpy as np

from featureflow.config import CONFIG, FLOWNET_DEPTH
from featureflow.correlation import CorrConfig, correlation, correlation_backward
from featureflow.exceptions import InvalidConfig, ShapeMismatch
from featureflow.layers import BlockTrace, Conv2d, EmbeddedBlock
from featureflow.logging import LOGGER
from featureflow.tensor import (
    Param,
    Tensor,
    add_elementwise,
    concat_backward,
    concat_channels,
    relu,
    relu_backward,
    zero_grads,
)
from featureflow.warp import FlowMap


__all__ = ["VARIANTS", "IffConfig", "LayerReport", "IffModule", "build"]


VARIANTS = ("basic", "advanced")
HEAD_SCALE = 0.1


class IffConfig(NamedTuple):
    """Graph variant and channel widths."""

    variant: str = "advanced"
    in_channels: int = 8
    mid_channels: int = 8
    fuse_channels: int = 4
    corr: CorrConfig = CorrConfig(2, 1)

    @classmethod
    def backbone(cls, variant: str = "advanced") -> IffConfig:
        """Returns the widths used on a ResNet-101 backbone."""
        return cls(variant, 1024, 512, 128, CorrConfig(10, 2))

    @classmethod
    def toy(cls, variant: str = "advanced") -> IffConfig:
        """Returns the desk-scale widths."""
        return cls(variant)

    @classmethod
    def from_config(cls) -> IffConfig:
        """Reads the [iff] section with fallback on the toy widths."""
        toy = cls.toy()
        return cls(
            CONFIG.get("iff", "variant", fallback=toy.variant),
            CONFIG.getint("iff", "in_channels", fallback=toy.in_channels),
            CONFIG.getint("iff", "mid_channels", fallback=toy.mid_channels),
            CONFIG.getint("iff", "fuse_channels", fallback=toy.fuse_channels),
            CorrConfig(
                CONFIG.getint(
                    "iff", "max_displacement", fallback=toy.corr.max_displacement
                ),
                CONFIG.getint("iff", "stride", fallback=toy.corr.stride),
            ),
        ).validate()

    def validate(self) -> IffConfig:
        """Returns the config or raises InvalidConfig."""
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"Unknown IFF variant: {self.variant!r}.")

        for name in ("in_channels", "mid_channels", "fuse_channels"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}.")

        self.corr.validate()
        return self


class LayerReport(NamedTuple):
    """Structural summary of an IFF module."""

    variant: str
    conv_layer_count: int
    layer_count: int
    projection_count: int
    parameter_count: int
    multiply_accumulates: int | None = None

    @property
    def shallower_than_flownet(self) -> bool:
        """Checks the depth against FlowNet's 23 layers."""
        return self.layer_count < FLOWNET_DEPTH

    def to_json(self) -> dict:
        """Returns a JSON-ish dict."""
        return {**self._asdict(), "shallower_than_flownet": self.shallower_than_flownet}


class _AdvancedTrace(NamedTuple):
    """Intermediate values of one advanced forward pass."""

    eb1_i: BlockTrace
    eb1_j: BlockTrace
    corr: Tensor
    corr_pre: Tensor
    eb2: BlockTrace
    merged: Tensor
    fuse_pre: Tensor
    fuse: Tensor


class IffModule:
    """A feature flow estimation graph with named parameters."""

    def __init__(self, config: IffConfig, layers: Mapping[str, Conv2d | EmbeddedBlock]):
        self.config = config
        self.layers = dict(layers)

    def __getitem__(self, name: str) -> Conv2d | EmbeddedBlock:
        """Returns the layer of the given name."""
        return self.layers[name]

    @classmethod
    def build(cls, config: IffConfig, seed: int = 0) -> IffModule:
        """Creates a module with deterministic initial weights."""
        config.validate()
        rng = np.random.default_rng(seed)

        if config.variant == "basic":
            layers = {
                "conv_i": Conv2d.build(
                    rng, "conv_i", config.in_channels, config.mid_channels, 1
                ),
                "conv_j": Conv2d.build(
                    rng, "conv_j", config.in_channels, config.mid_channels, 3
                ),
                "head": Conv2d.build(
                    rng, "head", 2 * config.mid_channels, 2, 3, scale=HEAD_SCALE
                ),
            }
        else:
            layers = {
                "eb1": EmbeddedBlock.build(
                    rng, "eb1", config.in_channels, config.mid_channels
                ),
                "corr_proj": Conv2d.build(
                    rng, "corr_proj", config.corr.channels, config.fuse_channels, 3
                ),
                "eb2": EmbeddedBlock.build(
                    rng, "eb2", config.mid_channels, config.fuse_channels
                ),
                "fuse": Conv2d.build(
                    rng, "fuse", config.fuse_channels, config.fuse_channels, 3
                ),
                "head": Conv2d.build(
                    rng, "head", config.fuse_channels, 2, 3, scale=HEAD_SCALE
                ),
            }

        LOGGER.debug("Built %s IFF module with seed %d.", config.variant, seed)
        return cls(config, layers)

    def convs(self) -> Iterator[Conv2d]:
        """Yields every convolution, skip projections included."""
        for layer in self.layers.values():
            if isinstance(layer, EmbeddedBlock):
                yield from layer.layers()
            else:
                yield layer

    @property
    def params(self) -> list[Param]:
        """Returns all parameters in a stable order."""
        return [param for conv in self.convs() for param in conv.params()]

    def state(self) -> dict[str, np.ndarray]:
        """Returns the parameter values by name."""
        return {param.name: param.value for param in self.params}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """Overwrites the parameter values, which must match in name and shape."""
        params = self.params
        names = [param.name for param in params]

        if sorted(names) != sorted(state):
            raise InvalidConfig(
                f"Checkpoint parameters {sorted(state)} do not match {sorted(names)}."
            )

        for param in params:
            if state[param.name].shape != param.value.shape:
                raise ShapeMismatch(
                    param.name, param.value.shape, state[param.name].shape
                )

        for param in params:
            param.value[...] = state[param.name]

    def zero_grads(self) -> None:
        """Resets all parameter gradients."""
        zero_grads(self.params)

    def report(
        self, height: int | None = None, width: int | None = None
    ) -> LayerReport:
        """Returns layer and parameter counts and, given a map size, the MAC count."""
        projections = sum(
            layer.proj is not None
            for layer in self.layers.values()
            if isinstance(layer, EmbeddedBlock)
        )
        convs = sum(1 for _ in self.convs()) - projections
        macs = None

        if height is not None and width is not None:
            macs = sum(
                conv.multiply_accumulates(height, width) for conv in self.convs()
            )

            if self.config.variant == "advanced":
                corr = self.config.corr.channels * self.config.mid_channels
                macs += corr * height * width

        return LayerReport(
            self.config.variant,
            convs,
            convs + 1 if self.config.variant == "basic" else convs,
            projections,
            sum(param.size for param in self.params),
            macs,
        )

    def _check_inputs(self, f_i: Tensor, f_j: Tensor) -> None:
        """Raises ShapeMismatch unless both inputs fit the module."""
        expected = (self.config.in_channels, *f_i.shape[1:])

        if f_i.ndim != 3 or f_i.shape != expected:
            raise ShapeMismatch("IFF input f_i", expected, f_i.shape)

        if f_j.shape != f_i.shape:
            raise ShapeMismatch("IFF input f_j", f_i.shape, f_j.shape)

    def forward(self, f_i: Tensor, f_j: Tensor) -> FlowMap:
        """Predicts the flow map that warps f_j onto f_i."""
        self._check_inputs(f_i, f_j)

        if self.config.variant == "basic":
            return self._forward_basic(f_i, f_j)[0]

        return self._forward_advanced(f_i, f_j)[0]

    def forward_backward(
        self, f_i: Tensor, f_j: Tensor, grad_flow: FlowMap
    ) -> tuple[Tensor, Tensor]:
        """Back-propagates a flow gradient, accumulating parameter gradients.

        Returns the gradients w.r.t. f_i and f_j.
        """
        self._check_inputs(f_i, f_j)
        expected = (2, *f_i.shape[1:])

        if grad_flow.shape != expected:
            raise ShapeMismatch("IFF flow gradient", expected, grad_flow.shape)

        if self.config.variant == "basic":
            return self._backward_basic(f_i, f_j, grad_flow)

        return self._backward_advanced(f_i, f_j, grad_flow)

    def relu_inputs(self, f_i: Tensor, f_j: Tensor) -> list[Tensor]:
        """Returns the argument of every ReLU in one forward pass."""
        self._check_inputs(f_i, f_j)

        if self.config.variant == "basic":
            pre_i, pre_j, _ = self._forward_basic(f_i, f_j)[1]
            return [pre_i, pre_j]

        trace = self._forward_advanced(f_i, f_j)[1]
        return [
            *trace.eb1_i.relu_inputs,
            *trace.eb1_j.relu_inputs,
            trace.corr_pre,
            *trace.eb2.relu_inputs,
            trace.fuse_pre,
        ]

    def _forward_basic(self, f_i: Tensor, f_j: Tensor) -> tuple[FlowMap, tuple]:
        """Returns the flow and the pre-activations of both branches."""
        pre_i = self["conv_i"].forward(f_i)
        pre_j = self["conv_j"].forward(f_j)
        joined = concat_channels(relu(pre_i), relu(pre_j))
        return self["head"].forward(joined), (pre_i, pre_j, joined)

    def _backward_basic(
        self, f_i: Tensor, f_j: Tensor, grad_flow: FlowMap
    ) -> tuple[Tensor, Tensor]:
        """Recomputes the basic forward pass and back-propagates through it."""
        _, (pre_i, pre_j, joined) = self._forward_basic(f_i, f_j)
        grad_joined = self["head"].backward(joined, grad_flow)
        grad_i, grad_j = concat_backward(grad_joined, self.config.mid_channels)
        return (
            self["conv_i"].backward(f_i, relu_backward(pre_i, grad_i)),
            self["conv_j"].backward(f_j, relu_backward(pre_j, grad_j)),
        )

    def _forward_advanced(
        self, f_i: Tensor, f_j: Tensor
    ) -> tuple[FlowMap, _AdvancedTrace]:
        """Returns the flow and the trace of the advanced graph."""
        emb_i, eb1_i = self["eb1"].forward(f_i)
        emb_j, eb1_j = self["eb1"].forward(f_j)
        corr = correlation(emb_i, emb_j, self.config.corr)
        corr_pre = self["corr_proj"].forward(corr)
        current, eb2 = self["eb2"].forward(emb_i)
        merged = add_elementwise(relu(corr_pre), current)
        fuse_pre = self["fuse"].forward(merged)
        fuse = relu(fuse_pre)
        flow = self["head"].forward(fuse)
        return flow, _AdvancedTrace(
            eb1_i, eb1_j, corr, corr_pre, eb2, merged, fuse_pre, fuse
        )

    def _backward_advanced(
        self, f_i: Tensor, f_j: Tensor, grad_flow: FlowMap
    ) -> tuple[Tensor, Tensor]:
        """Recomputes the advanced forward pass and back-propagates through it."""
        _, trace = self._forward_advanced(f_i, f_j)
        grad_fuse = self["head"].backward(trace.fuse, grad_flow)
        grad_merged = self["fuse"].backward(
            trace.merged, relu_backward(trace.fuse_pre, grad_fuse)
        )
        grad_emb_i = self["eb2"].backward(trace.eb2, grad_merged)
        grad_corr = self["corr_proj"].backward(
            trace.corr, relu_backward(trace.corr_pre, grad_merged)
        )
        emb_i = trace.eb2.input
        emb_j = relu(trace.eb1_j.merged)
        grad_corr_i, grad_corr_j = correlation_backward(
            emb_i, emb_j, self.config.corr, grad_corr
        )
        return (
            self["eb1"].backward(trace.eb1_i, grad_emb_i + grad_corr_i),
            self["eb1"].backward(trace.eb1_j, grad_corr_j),
        )


def build(config: IffConfig, seed: int = 0) -> IffModule:
    """Creates an IFF module."""

    return IffModule.build(config, seed)
