"""Slow / middle / fast motion categories from ground-truth box overlap."""

from __future__ import annotations
from collections import Counter
from enum import Enum
from typing import Iterable, Mapping, NamedTuple

from featureflow.config import MOTION_RADIUS
from featureflow.exceptions import UnknownFrame
from featureflow.seqnms import Box, iou


__all__ = [
    "MotionCategory",
    "TrackAnnotation",
    "average_iou",
    "motion_category",
    "category_distribution",
]


SLOW_ABOVE = 0.9
FAST_BELOW = 0.7


class MotionCategory(str, Enum):
    """Motion speed classes."""

    SLOW = "slow"
    MIDDLE = "middle"
    FAST = "fast"


class TrackAnnotation(NamedTuple):
    """Ground-truth boxes of one object by frame index."""

    object_id: int
    boxes: Mapping[int, Box]


def average_iou(
    track: TrackAnnotation, t: int, radius: int = MOTION_RADIUS
) -> float | None:
    """Returns the mean IoU of the box at t with the other boxes within the radius.

    Returns None if no other frame of the track lies in the window.
    """

    if t not in track.boxes:
        raise UnknownFrame(track.object_id, t)

    overlaps = [
        iou(track.boxes[t], box)
        for frame, box in sorted(track.boxes.items())
        if frame != t and abs(frame - t) <= radius
    ]

    if not overlaps:
        return None

    return sum(overlaps) / len(overlaps)


def motion_category(
    track: TrackAnnotation, t: int, radius: int = MOTION_RADIUS
) -> MotionCategory | None:
    """Classifies the object's motion at frame t; None if it is undefined."""

    if (overlap := average_iou(track, t, radius)) is None:
        return None

    if overlap > SLOW_ABOVE:
        return MotionCategory.SLOW

    if overlap >= FAST_BELOW:
        return MotionCategory.MIDDLE

    return MotionCategory.FAST


def category_distribution(
    tracks: Iterable[TrackAnnotation], radius: int = MOTION_RADIUS
) -> dict[MotionCategory, float]:
    """Returns the share of each category over all annotated (track, frame) pairs."""

    counts = Counter(
        category
        for track in tracks
        for frame in track.boxes
        if (category := motion_category(track, frame, radius)) is not None
    )
    total = sum(counts.values())
    return {
        category: counts[category] / total if total else 0.0
        for category in MotionCategory
    }
