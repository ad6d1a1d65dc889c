"""InceptionCapsule: Inception-ResNet features, capsule routing and self-attention on numpy."""

from .model import ModelConfig, forward, init_params, predict_probs
from .training import TrainConfig, evaluate, sweep_batch_size, train

__all__ = ["ModelConfig", "TrainConfig", "evaluate", "forward", "init_params", "predict_probs",
           "sweep_batch_size", "train"]
__version__ = "0.1.0"
