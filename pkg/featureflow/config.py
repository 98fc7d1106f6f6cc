"""Configuration and defaults."""

from configparser import ConfigParser
from pathlib import Path


__all__ = [
    "CONFIG",
    "CONFIG_FILE",
    "FLOWNET_DEPTH",
    "LINK_IOU",
    "NMS_IOU",
    "TRL_LAMBDA",
    "TRL_DELTA",
    "TRAIN_STEPS",
    "TRAIN_LR",
    "TRAIN_RADIUS",
    "TRAIN_NEIGHBORS",
    "TRAIN_LR_DROP",
    "MOTION_RADIUS",
]


CONFIG = ConfigParser()
CONFIG_FILE = Path("/etc/featureflow.conf")

FLOWNET_DEPTH: int = 23
LINK_IOU: float = 0.5
NMS_IOU: float = 0.3
TRL_LAMBDA: float = 0.65
TRL_DELTA: float = 1.0
TRAIN_STEPS: int = 2000
TRAIN_LR: float = 0.1
TRAIN_RADIUS: int = 10
TRAIN_NEIGHBORS: int = 2
TRAIN_LR_DROP: float = 0.6
MOTION_RADIUS: int = 10
