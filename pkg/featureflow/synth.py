"""Synthetic feature sequences with known ground-truth flow.

Every frame samples a continuous multi-channel pattern P on the feature
grid (x = column, y = row). Depending on the motion, frame t is

constant-shift:  F_t(p) = P(p - t * v)
rotation:        F_t(p) = P(c + R(-t * angle) (p - c)),  c = grid centre
random-walk:     F_t(p) = sum_b A_b G(p - c_b(t)),      c_b random walks

so that F_{t+1}(p) = F_t(p + M_t(p)) with the stored flow M_t. For random
walks, M_t(p) is the step of the blob dominating p in frame t + 1, which is
exact where blobs do not overlap.
"""

from __future__ import annotations
from configparser import ConfigParser
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from numpy.typing import NDArray

from featureflow.exceptions import InvalidConfig
from featureflow.tensor import Tensor
from featureflow.warp import FlowMap


__all__ = ["PATTERNS", "MOTIONS", "SynthSpec", "generate_synthetic", "rotation_flow"]


PATTERNS = ("gaussian-blobs", "sinusoid", "random-smooth")
MOTIONS = ("constant-shift", "rotation", "random-walk")
Field = Callable[[NDArray, NDArray], NDArray]


class SynthSpec(NamedTuple):
    """Parameters of a synthetic feature sequence."""

    channels: int = 8
    height: int = 16
    width: int = 16
    num_frames: int = 12
    pattern: str = "random-smooth"
    motion: str = "constant-shift"
    dx: float = 2.0
    dy: float = 0.0
    angle: float = 0.05
    blobs: int = 6
    walk_step: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    @classmethod
    def from_text(cls, text: str) -> SynthSpec:
        """Parses a flat key=value file."""
        parser = ConfigParser()
        parser.read_string("[synth]\n" + text)
        section = parser["synth"]
        defaults = cls()
        unknown = set(section) - set(cls._fields)

        if unknown:
            raise InvalidConfig(f"Unknown synth keys: {', '.join(sorted(unknown))}.")

        try:
            values = {
                field: type(getattr(defaults, field))(section[field])
                for field in cls._fields
                if field in section
            }
        except ValueError as error:
            raise InvalidConfig(f"Invalid synth value: {error}.") from error

        return cls(**values).validate()

    @classmethod
    def load(cls, path: Path | str) -> SynthSpec:
        """Reads a key=value file."""
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        """Returns the key=value representation."""
        return "".join(
            f"{field} = {value}\n" for field, value in self._asdict().items()
        )

    def validate(self) -> SynthSpec:
        """Returns the spec or raises InvalidConfig."""
        if min(self.channels, self.height, self.width) < 1:
            raise InvalidConfig(
                f"Degenerate dimensions: {self.channels}x{self.height}x{self.width}."
            )

        if self.num_frames < 2:
            raise InvalidConfig(f"Need at least two frames, got {self.num_frames}.")

        if self.pattern not in PATTERNS:
            raise InvalidConfig(f"Unknown pattern: {self.pattern!r}.")

        if self.motion not in MOTIONS:
            raise InvalidConfig(f"Unknown motion: {self.motion!r}.")

        if self.motion == "random-walk" and self.pattern != "gaussian-blobs":
            raise InvalidConfig("Random walks need the gaussian-blobs pattern.")

        if self.noise_sigma < 0:
            raise InvalidConfig(f"Noise sigma must be >= 0, got {self.noise_sigma}.")

        return self


class _Blobs(NamedTuple):
    centers: NDArray  # (B, 2) as (x, y)
    sigmas: NDArray  # (B,)
    amplitudes: NDArray  # (C, B)


def _waves(
    rng: np.random.Generator,
    spec: SynthSpec,
    count: int,
    wavelengths: tuple[float, float],
) -> Field:
    """Returns a sum of random plane waves per channel."""

    length = rng.uniform(*wavelengths, size=(spec.channels, count))
    direction = rng.uniform(0.0, 2.0 * np.pi, size=(spec.channels, count))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(spec.channels, count))
    amplitude = rng.normal(size=(spec.channels, count)) / np.sqrt(count)
    kx = 2.0 * np.pi * np.cos(direction) / length
    ky = 2.0 * np.pi * np.sin(direction) / length

    def field(x: NDArray, y: NDArray) -> NDArray:
        arguments = (
            kx[..., None, None] * x + ky[..., None, None] * y + phase[..., None, None]
        )
        return (amplitude[..., None, None] * np.sin(arguments)).sum(axis=1)

    return field


def _draw_blobs(rng: np.random.Generator, spec: SynthSpec) -> _Blobs:
    """Draws blob centres, widths and per-channel amplitudes."""

    centers = rng.uniform(
        (0.0, 0.0), (spec.width - 1.0, spec.height - 1.0), size=(spec.blobs, 2)
    )
    sigmas = rng.uniform(1.5, 3.0, size=spec.blobs)
    amplitudes = rng.uniform(-1.0, 1.0, size=(spec.channels, spec.blobs))
    return _Blobs(centers, sigmas, amplitudes)


def _envelopes(blobs: _Blobs, x: NDArray, y: NDArray) -> NDArray:
    """Returns the (B, H, W) Gaussian envelopes of all blobs."""

    cx = blobs.centers[:, 0, None, None]
    cy = blobs.centers[:, 1, None, None]
    sigma = blobs.sigmas[:, None, None]
    return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2))


def _blob_field(blobs: _Blobs) -> Field:
    """Returns the field of amplitude-weighted blob envelopes."""

    def field(x: NDArray, y: NDArray) -> NDArray:
        return np.tensordot(blobs.amplitudes, _envelopes(blobs, x, y), axes=1)

    return field


def _pattern(rng: np.random.Generator, spec: SynthSpec) -> Field:
    """Returns the static field of the configured pattern."""

    if spec.pattern == "sinusoid":
        return _waves(rng, spec, 2, (6.0, 12.0))

    if spec.pattern == "random-smooth":
        return _waves(rng, spec, 8, (8.0, 16.0))

    return _blob_field(_draw_blobs(rng, spec))


def rotation_flow(height: int, width: int, angle: float) -> FlowMap:
    """Returns the flow of a rigid rotation by angle about the grid centre."""

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    cos, sin = np.cos(angle), np.sin(angle)
    # R(-angle) applied to p - c
    qx = cx + cos * (xs - cx) + sin * (ys - cy)
    qy = cy - sin * (xs - cx) + cos * (ys - cy)
    return np.stack((qx - xs, qy - ys))


def _rigid(spec: SynthSpec, pattern: Field) -> tuple[list[Tensor], list[FlowMap]]:
    """Moves the whole pattern by a constant shift or a rotation."""

    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    frames = []

    if spec.motion == "constant-shift":
        for t in range(spec.num_frames):
            frames.append(pattern(xs - t * spec.dx, ys - t * spec.dy))

        flow = np.stack(
            (np.full(xs.shape, -spec.dx, dtype=np.float64), np.full(xs.shape, -spec.dy))
        )
    else:
        cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0

        for t in range(spec.num_frames):
            cos, sin = np.cos(t * spec.angle), np.sin(t * spec.angle)
            frames.append(
                pattern(
                    cx + cos * (xs - cx) + sin * (ys - cy),
                    cy - sin * (xs - cx) + cos * (ys - cy),
                )
            )

        flow = rotation_flow(spec.height, spec.width, spec.angle)

    return frames, [flow.copy() for _ in range(spec.num_frames - 1)]


def _random_walk(
    rng: np.random.Generator, spec: SynthSpec
) -> tuple[list[Tensor], list[FlowMap]]:
    """Moves every blob independently along a Gaussian random walk."""

    blobs = _draw_blobs(rng, spec)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    frames = [_blob_field(blobs)(xs, ys)]
    flows = []

    for _ in range(spec.num_frames - 1):
        steps = rng.normal(scale=spec.walk_step, size=blobs.centers.shape)
        blobs = blobs._replace(centers=blobs.centers + steps)
        frames.append(_blob_field(blobs)(xs, ys))
        dominant = np.argmax(
            np.abs(blobs.amplitudes).sum(axis=0)[:, None, None]
            * _envelopes(blobs, xs, ys),
            axis=0,
        )
        flows.append(np.stack((-steps[dominant, 0], -steps[dominant, 1])))

    return frames, flows


def generate_synthetic(spec: SynthSpec) -> tuple[list[Tensor], list[FlowMap]]:
    """Returns the frames and the flows mapping frame t + 1 positions into frame t."""

    spec.validate()
    rng = np.random.default_rng(spec.seed)

    if spec.motion == "random-walk":
        frames, flows = _random_walk(rng, spec)
    else:
        frames, flows = _rigid(spec, _pattern(rng, spec))

    if spec.noise_sigma > 0:
        frames = [
            frame + rng.normal(scale=spec.noise_sigma, size=frame.shape)
            for frame in frames
        ]

    return [np.ascontiguousarray(frame) for frame in frames], flows
