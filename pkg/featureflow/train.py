"""Self-supervised IFF training on synthetic sequences."""

from __future__ import annotations
from json import dumps, loads
from math import isfinite
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from featureflow.config import (
    CONFIG,
    TRAIN_LR,
    TRAIN_LR_DROP,
    TRAIN_NEIGHBORS,
    TRAIN_RADIUS,
    TRAIN_STEPS,
)
from featureflow.exceptions import (
    FormatError,
    InvalidConfig,
    ShapeMismatch,
    TrainingDiverged,
)
from featureflow.iff import IffModule
from featureflow.logging import LOGGER
from featureflow.synth import SynthSpec, generate_synthetic
from featureflow.tensor import Tensor, sgd_step
from featureflow.trl import TrlConfig, trl_backward, trl_forward
from featureflow.warp import FlowMap, bilinear_warp


__all__ = [
    "TrainingConfig",
    "Evaluation",
    "TrainingReport",
    "endpoint_error",
    "evaluate",
    "train_iff",
]


class TrainingConfig(NamedTuple):
    """Optimisation schedule and frame-pair sampling."""

    steps: int = TRAIN_STEPS
    lr: float = TRAIN_LR
    lr_drop: float = TRAIN_LR_DROP
    radius: int = TRAIN_RADIUS
    neighbors: int = TRAIN_NEIGHBORS
    bidirectional: bool = True
    seed: int = 0
    log_every: int = 100

    @classmethod
    def from_config(cls) -> TrainingConfig:
        """Reads the [train] section with fallback on the defaults."""
        return cls(
            CONFIG.getint("train", "steps", fallback=TRAIN_STEPS),
            CONFIG.getfloat("train", "lr", fallback=TRAIN_LR),
            CONFIG.getfloat("train", "lr_drop", fallback=TRAIN_LR_DROP),
            CONFIG.getint("train", "radius", fallback=TRAIN_RADIUS),
            CONFIG.getint("train", "neighbors", fallback=TRAIN_NEIGHBORS),
            CONFIG.getboolean("train", "bidirectional", fallback=True),
        ).validate()

    def validate(self) -> TrainingConfig:
        """Returns the config or raises InvalidConfig."""
        if self.steps < 0:
            raise InvalidConfig(f"Steps must be >= 0, got {self.steps}.")

        if self.lr < 0:
            raise InvalidConfig(f"Learning rate must be >= 0, got {self.lr}.")

        if not 0.0 <= self.lr_drop <= 1.0:
            raise InvalidConfig(f"LR drop must lie in [0, 1], got {self.lr_drop}.")

        if self.radius < 1 or self.neighbors < 1:
            raise InvalidConfig("Radius and neighbour count must be >= 1.")

        return self

    def learning_rate(self, step: int) -> float:
        """Returns the rate of a step, reduced tenfold after the drop point."""
        return self.lr if step < int(self.lr_drop * self.steps) else 0.1 * self.lr


class Evaluation(NamedTuple):
    """Flow accuracy and alignment quality over all consecutive frame pairs."""

    epe: float
    aligned_mse: float
    unaligned_mse: float


class TrainingReport(NamedTuple):
    """Per-step losses and learning rates plus evaluations before and after."""

    losses: list[float]
    learning_rates: list[float]
    initial: Evaluation
    final: Evaluation

    @property
    def initial_epe(self) -> float:
        """Returns the endpoint error before training."""
        return self.initial.epe

    @property
    def final_epe(self) -> float:
        """Returns the endpoint error after training."""
        return self.final.epe

    def to_json(self) -> str:
        """Serializes the report."""
        return dumps(
            {
                "losses": self.losses,
                "learning_rates": self.learning_rates,
                "initial": self.initial._asdict(),
                "final": self.final._asdict(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> TrainingReport:
        """Deserializes a report."""
        try:
            json = loads(text)
            return cls(
                [float(loss) for loss in json["losses"]],
                [float(lr) for lr in json["learning_rates"]],
                Evaluation(**json["initial"]),
                Evaluation(**json["final"]),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise FormatError(f"Invalid training report: {error}.") from error

    def save(self, path: Path | str) -> None:
        """Writes the report as JSON."""
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path | str) -> TrainingReport:
        """Reads a JSON report."""
        return cls.from_json(Path(path).read_text())


def _interior(shape: tuple[int, ...], border: int) -> tuple[slice, ...]:
    """Returns the slices that drop border positions on every side."""

    height, width = shape[-2:]

    if 2 * border >= min(height, width):
        raise InvalidConfig(f"Border {border} leaves no interior of {height}x{width}.")

    return (..., slice(border, height - border), slice(border, width - border))


def endpoint_error(pred: FlowMap, gt: FlowMap, border: int = 0) -> float:
    """Returns the mean Euclidean distance of flow vectors inside the border."""

    if pred.shape != gt.shape or pred.shape[0] != 2:
        raise ShapeMismatch("endpoint_error", gt.shape, pred.shape)

    diff = (pred - gt)[_interior(pred.shape, border)]
    return float(np.sqrt(diff[0] ** 2 + diff[1] ** 2).mean())


def evaluate(
    module: IffModule,
    frames: Sequence[Tensor],
    gt_flows: Sequence[FlowMap],
    border: int,
) -> Evaluation:
    """Scores the predicted flows of all (t + 1, t) pairs against ground truth."""

    epes, aligned, unaligned = [], [], []

    for t, gt in enumerate(gt_flows):
        current, neighbor = frames[t + 1], frames[t]
        flow = module.forward(current, neighbor)
        interior = _interior(current.shape, border)
        epes.append(endpoint_error(flow, gt, border))
        aligned.append(
            float(((bilinear_warp(neighbor, flow) - current)[interior] ** 2).mean())
        )
        unaligned.append(float(((neighbor - current)[interior] ** 2).mean()))

    return Evaluation(
        float(np.mean(epes)), float(np.mean(aligned)), float(np.mean(unaligned))
    )


def _sample_pair(
    rng: np.random.Generator, count: int, cfg: TrainingConfig
) -> tuple[int, list[int]]:
    """Returns a current frame and neighbours within the temporal radius."""

    if cfg.bidirectional:
        current = int(rng.integers(count))
        offsets = [
            offset
            for offset in range(-cfg.radius, cfg.radius + 1)
            if offset and 0 <= current + offset < count
        ]
    else:
        current = int(rng.integers(1, count))
        offsets = list(range(-min(cfg.radius, current), 0))

    return current, [current + int(rng.choice(offsets)) for _ in range(cfg.neighbors)]


def train_iff(
    module: IffModule,
    spec: SynthSpec,
    cfg: TrainingConfig = TrainingConfig(),
    trl: TrlConfig = TrlConfig(),
) -> TrainingReport:
    """Trains the module by SGD on the transformation residual loss."""

    cfg.validate()
    trl.validate()

    if spec.channels != module.config.in_channels:
        raise ShapeMismatch(
            "train_iff", (module.config.in_channels,), (spec.channels,)
        )

    frames, gt_flows = generate_synthetic(spec)
    border = module.config.corr.max_displacement
    rng = np.random.default_rng(cfg.seed)
    initial = evaluate(module, frames, gt_flows, border)
    LOGGER.info("Initial EPE %.4f.", initial.epe)
    losses, learning_rates = [], []

    for step in range(cfg.steps):
        lr = cfg.learning_rate(step)
        current, neighbors = _sample_pair(rng, len(frames), cfg)
        f_i = frames[current]
        module.zero_grads()
        loss = 0.0

        for neighbor in neighbors:
            f_j = frames[neighbor]
            flow = module.forward(f_i, f_j)
            loss += trl_forward(f_i, f_j, flow, trl) / len(neighbors)
            _, _, grad_flow = trl_backward(f_i, f_j, flow, trl)
            module.forward_backward(f_i, f_j, grad_flow / len(neighbors))

        if not isfinite(loss):
            raise TrainingDiverged(step, loss)

        sgd_step(module.params, lr)
        losses.append(loss)
        learning_rates.append(lr)

        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            LOGGER.info("Step %d/%d: loss %.6f, lr %g.", step + 1, cfg.steps, loss, lr)

    final = evaluate(module, frames, gt_flows, border)
    LOGGER.info("Final EPE %.4f.", final.epe)
    return TrainingReport(losses, learning_rates, initial, final)
