"""Self-supervised disentangled sequential VAEs on synthetic video and audio-like data."""

__version__ = "0.1.0"

from .datasets import Sequence, SequenceDataset, generate_shapes, generate_tones, load_dataset, save_dataset
from .losses import LossBreakdown
from .model import GaussianParams, ModelConfig, SequentialVAE
from .training import TrainConfig, train

__all__ = [
    "GaussianParams", "LossBreakdown", "ModelConfig", "Sequence", "SequenceDataset", "SequentialVAE",
    "TrainConfig", "generate_shapes", "generate_tones", "load_dataset", "save_dataset", "train",
]
