"""Seq-NMS and Seq-NMS+ post-processing of per-frame detections.

Detections of one class are linked into chains over consecutive frames
whenever neighbouring boxes overlap by at least the link IoU. The chain with
the largest score sum is selected, all of its members are rescored with a
common sequence score, and the chain is removed from the pool until the pool
is empty. Seq-NMS+ suppresses duplicates per frame before linking and
rescores with 0.5 * mean + 0.5 * max; the original ordering suppresses
against each selected chain afterwards and rescores with either mean or max.
"""

from __future__ import annotations
from fractions import Fraction
from itertools import groupby
from json import dumps, loads
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

from featureflow.config import CONFIG, LINK_IOU, NMS_IOU
from featureflow.exceptions import FormatError, InvalidConfig
from featureflow.logging import LOGGER


__all__ = [
    "VARIANTS",
    "RESCORE_OPS",
    "Box",
    "Detection",
    "BoxSequence",
    "SeqNmsConfig",
    "iou",
    "nms",
    "best_sequence",
    "best_sequence_exhaustive",
    "rescore",
    "seqnms",
    "seqnms_plus",
    "load_detections",
    "dump_detections",
]


Box = tuple[float, float, float, float]
Pool = Sequence[Sequence[tuple[int, "Detection"]]]
VARIANTS = ("plus", "original")
RESCORE_OPS = ("mean", "max")


def _integral(value) -> int:
    """Returns a JSON number as an int unless it has a fractional part."""

    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"Not a number: {value!r}.")

    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"Not an integer: {value!r}.")

    return int(value)


class Detection(NamedTuple):
    """A scored, class-labeled box in one frame."""

    frame: int
    class_id: int
    score: float
    box: Box
    sequence_id: int | None = None

    @classmethod
    def from_json(cls, json: dict) -> Detection:
        """Creates a detection from a JSON object."""
        try:
            detection = cls(
                _integral(json["frame"]),
                _integral(json["class"]),
                float(json["score"]),
                tuple(float(value) for value in json["box"]),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise FormatError(f"Invalid detection: {json!r}.") from error

        return detection.validate()

    def to_json(self) -> dict:
        """Returns a JSON object."""
        json = {
            "frame": self.frame,
            "class": self.class_id,
            "score": self.score,
            "box": list(self.box),
        }

        if self.sequence_id is not None:
            json["sequence_id"] = self.sequence_id

        return json

    def validate(self) -> Detection:
        """Returns the detection or raises FormatError."""
        if len(self.box) != 4:
            raise FormatError(f"Box must have four coordinates: {self.box}.")

        x1, y1, x2, y2 = self.box

        if not (x1 < x2 and y1 < y2):
            raise FormatError(f"Degenerate box: {self.box}.")

        if not 0.0 <= self.score <= 1.0:
            raise FormatError(f"Score out of [0, 1]: {self.score}.")

        return self


class BoxSequence(NamedTuple):
    """Detections of one class linked over consecutive frames.

    The score sum is kept exact, so equal sums are true ties.
    """

    members: tuple[Detection, ...]
    indices: tuple[int, ...]
    score_sum: Fraction

    @classmethod
    def single(cls, index: int, detection: Detection) -> BoxSequence:
        """Returns the chain of one detection."""
        return cls((detection,), (index,), Fraction(detection.score))

    @property
    def start(self) -> int:
        """Returns the first frame index."""
        return self.members[0].frame

    @property
    def raw_scores(self) -> list[float]:
        """Returns the member scores."""
        return [member.score for member in self.members]

    def key(self) -> tuple[Fraction, int, tuple[int, ...]]:
        """Returns the selection order: larger sum, earlier start, smaller indices."""
        return -self.score_sum, self.start, self.indices

    def extend(self, index: int, detection: Detection) -> BoxSequence:
        """Returns the chain continued by a detection of the next frame."""
        return type(self)(
            (*self.members, detection),
            (*self.indices, index),
            self.score_sum + Fraction(detection.score),
        )


class SeqNmsConfig(NamedTuple):
    """Thresholds and the variant of the post-processor."""

    link_iou: float = LINK_IOU
    nms_iou: float = NMS_IOU
    variant: str = "plus"
    rescore_op: str = "mean"

    @classmethod
    def from_config(cls) -> SeqNmsConfig:
        """Reads the [seqnms] section with fallback on the defaults."""
        return cls(
            CONFIG.getfloat("seqnms", "link_iou", fallback=LINK_IOU),
            CONFIG.getfloat("seqnms", "nms_iou", fallback=NMS_IOU),
            CONFIG.get("seqnms", "variant", fallback="plus"),
            CONFIG.get("seqnms", "rescore", fallback="mean"),
        ).validate()

    def validate(self) -> SeqNmsConfig:
        """Returns the config or raises InvalidConfig."""
        for name in ("link_iou", "nms_iou"):
            if not 0.0 < (value := getattr(self, name)) < 1.0:
                raise InvalidConfig(f"{name} must lie in (0, 1), got {value}.")

        if self.variant not in VARIANTS:
            raise InvalidConfig(f"Unknown Seq-NMS variant: {self.variant!r}.")

        if self.rescore_op not in RESCORE_OPS:
            raise InvalidConfig(f"Unknown rescore operation: {self.rescore_op!r}.")

        return self


def iou(a: Box, b: Box) -> float:
    """Returns the intersection over union of two boxes."""

    width = min(a[2], b[2]) - max(a[0], b[0])
    height = min(a[3], b[3]) - max(a[1], b[1])

    if width <= 0 or height <= 0:
        return 0.0

    intersection = width * height
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - intersection
    return intersection / union


def _nms_indices(dets: Sequence[Detection], iou_thresh: float) -> list[int]:
    """Returns the kept indices in descending score order."""

    kept = []
    order = sorted(range(len(dets)), key=lambda index: (-dets[index].score, index))

    for index in order:
        if all(iou(dets[index].box, dets[other].box) < iou_thresh for other in kept):
            kept.append(index)

    return kept


def nms(dets: Sequence[Detection], iou_thresh: float = NMS_IOU) -> list[Detection]:
    """Greedy non-maximum suppression of one frame's detections of one class."""

    return [dets[index] for index in _nms_indices(dets, iou_thresh)]


def _linked(a: Detection, b: Detection, link_iou: float) -> bool:
    """Checks whether two boxes of adjacent frames may be chained."""
    return iou(a.box, b.box) >= link_iou


def best_sequence(pool: Pool, link_iou: float = LINK_IOU) -> BoxSequence | None:
    """Finds the highest score-sum chain by dynamic programming over frames.

    The pool holds, per frame, (index, detection) pairs. Returns None for an
    empty pool.
    """

    best: BoxSequence | None = None
    previous: list[tuple[Detection, BoxSequence]] = []

    for frame in pool:
        current = []

        for index, detection in frame:
            candidate = BoxSequence.single(index, detection)

            for last, chain in previous:
                if not _linked(last, detection, link_iou):
                    continue

                extended = chain.extend(index, detection)

                if extended.key() < candidate.key():
                    candidate = extended

            current.append((detection, candidate))

            if best is None or candidate.key() < best.key():
                best = candidate

        previous = current

    return best


def _chains(pool: Pool, link_iou: float) -> Iterator[BoxSequence]:
    """Yields every valid chain of consecutive-frame detections."""

    def extend(frame: int, chain: BoxSequence) -> Iterator[BoxSequence]:
        """Yields the chain and all its continuations."""
        yield chain

        if frame + 1 >= len(pool):
            return

        for index, detection in pool[frame + 1]:
            if _linked(chain.members[-1], detection, link_iou):
                yield from extend(frame + 1, chain.extend(index, detection))

    for frame, detections in enumerate(pool):
        for index, detection in detections:
            yield from extend(frame, BoxSequence.single(index, detection))


def best_sequence_exhaustive(
    pool: Pool, link_iou: float = LINK_IOU
) -> BoxSequence | None:
    """Finds the best chain by enumerating all of them."""

    return min(_chains(pool, link_iou), key=BoxSequence.key, default=None)


def rescore(seq: BoxSequence, cfg: SeqNmsConfig = SeqNmsConfig()) -> float:
    """Returns the common score of a sequence's members."""

    scores = seq.raw_scores
    mean = sum(scores) / len(scores)

    if cfg.variant == "plus":
        return 0.5 * mean + 0.5 * max(scores)

    if cfg.rescore_op == "max":
        return max(scores)

    return mean


Selector = Callable[[Pool, float], "BoxSequence | None"]


def _pool(dets: Iterable[Detection], cfg: SeqNmsConfig) -> tuple[int, list[list]]:
    """Returns the first frame and the per-frame (index, detection) pool."""

    frames: dict[int, list[Detection]] = {}

    for detection in dets:
        frames.setdefault(detection.frame, []).append(detection)

    first, last = min(frames), max(frames)
    pool = [list(enumerate(frames.get(frame, []))) for frame in range(first, last + 1)]

    if cfg.variant == "original":
        return first, pool

    for frame in pool:
        kept = _nms_indices([detection for _, detection in frame], cfg.nms_iou)
        frame[:] = [frame[index] for index in sorted(kept)]

    return first, pool


def _select(
    dets: Iterable[Detection], cfg: SeqNmsConfig, selector: Selector
) -> Iterator[tuple[BoxSequence, float]]:
    """Runs the selection loop on the detections of one class."""

    first, pool = _pool(dets, cfg)

    while (seq := selector(pool, cfg.link_iou)) is not None:
        yield seq, rescore(seq, cfg)

        for member, index in zip(seq.members, seq.indices):
            frame = pool[member.frame - first]
            frame[:] = [
                (other, detection)
                for other, detection in frame
                if other != index
                and not (
                    cfg.variant == "original"
                    and iou(detection.box, member.box) >= cfg.nms_iou
                )
            ]


def seqnms(
    all_dets: Iterable[Detection],
    cfg: SeqNmsConfig = SeqNmsConfig(),
    *,
    selector: Selector = best_sequence,
) -> list[Detection]:
    """Rescores detections class by class and returns them in selection order."""

    cfg.validate()
    key = lambda detection: detection.class_id
    output: list[Detection] = []
    sequence_id = 0

    for class_id, dets in groupby(sorted(all_dets, key=key), key=key):
        for seq, score in _select(dets, cfg, selector):
            LOGGER.debug(
                "Sequence %d: class %d, frames %d-%d, score %f.",
                sequence_id,
                class_id,
                seq.start,
                seq.members[-1].frame,
                score,
            )
            output.extend(
                member._replace(score=score, sequence_id=sequence_id)
                for member in seq.members
            )
            sequence_id += 1

    return output


def seqnms_plus(
    all_dets: Iterable[Detection], cfg: SeqNmsConfig = SeqNmsConfig()
) -> list[Detection]:
    """Runs the NMS-first, mean-and-max variant."""

    return seqnms(all_dets, cfg._replace(variant="plus"))


def load_detections(text: str) -> list[Detection]:
    """Parses a JSON array of detections."""

    try:
        json = loads(text)
    except ValueError as error:
        raise FormatError(f"Invalid detections JSON: {error}.") from error

    if not isinstance(json, list):
        raise FormatError("Detections JSON must be an array.")

    return [Detection.from_json(item) for item in json]


def dump_detections(dets: Iterable[Detection]) -> str:
    """Serializes detections to a JSON array."""

    return dumps([detection.to_json() for detection in dets], indent=2)
