"""Python front end for the icssn library."""

import json

import torch  # noqa: F401  loads libtorch before the extension

from . import _core
from ._core import (
    CheckpointError,
    ConfigError,
    ContractError,
    ShapeError,
    SizeError,
    TrainingError,
    contrastive_loss,
    default_config_ini,
    load_config_ini,
    set_log_level,
    socl_labels,
    synth,
    write_synthetic_dataset,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "ShapeError",
    "SizeError",
    "TrainingError",
    "complexity",
    "contrastive_loss",
    "default_config_ini",
    "evaluate",
    "load_config_ini",
    "pixel_metrics",
    "set_log_level",
    "socl_labels",
    "synth",
    "train",
    "write_synthetic_dataset",
]


def pixel_metrics(pred, truth):
    return json.loads(_core.pixel_metrics(pred, truth))


def complexity(config="", input_size=512):
    return json.loads(_core.complexity(str(config), input_size))


def train(config, data, out, rounds=None):
    return json.loads(_core.train(str(config), str(data), str(out), rounds))


def evaluate(checkpoint, data, split="test"):
    return json.loads(_core.evaluate(str(checkpoint), str(data), split))
