"""Coordinate MLPs fitted to values and spatial derivatives (Sobolev training)."""

from .network import ACTIVATIONS, MlpParams, forward, forward_dual, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, sobolev_loss, train

__all__ = [
    "ACTIVATIONS",
    "MlpParams",
    "TrainConfig",
    "forward",
    "forward_dual",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "sobolev_loss",
    "train",
]
__version__ = "0.1.0"
