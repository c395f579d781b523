"""Stage, memory and logits distillation for 1-D convolutional sensor models."""

from .core import NumericError, ShapeError, Tensor
from .data import DataError, SynthSpec
from .distill import DistillConfig, PairingError, TrainConfig, smldist, train_teacher
from .nn import ModelConfig, Network, build_network

__all__ = [
    "DataError",
    "DistillConfig",
    "ModelConfig",
    "Network",
    "NumericError",
    "PairingError",
    "ShapeError",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "build_network",
    "smldist",
    "train_teacher",
]
