"""Differentiable blind phase search and end-to-end constellation learning."""

from .channel import ChannelConfig, ChannelKind, ConfigError, RngStream
from .constellation import Constellation, gray_qam
from .cpe import BpsConfig, BpsMode, bps
from .learn import TrainConfig, train, train_rpn_reference
from .metrics import ValidationGrid, awgn_bmi_oracle, validate

__version__ = "0.1.0"

__all__ = [
    "BpsConfig",
    "BpsMode",
    "ChannelConfig",
    "ChannelKind",
    "ConfigError",
    "Constellation",
    "RngStream",
    "TrainConfig",
    "ValidationGrid",
    "awgn_bmi_oracle",
    "bps",
    "gray_qam",
    "train",
    "train_rpn_reference",
    "validate",
]
