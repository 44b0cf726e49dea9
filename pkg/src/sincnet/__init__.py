"""Learnable sinc band-pass filterbank front end with a numpy speaker-recognition pipeline."""

from .filterbank import CutoffParams, SincFilterBank, build_filter, mel_initialize
from .nn import ModelConfig, Network, build_network
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["CutoffParams", "SincFilterBank", "build_filter", "mel_initialize", "ModelConfig",
           "Network", "build_network", "TrainConfig", "train"]
