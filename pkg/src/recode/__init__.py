"""Static recommender scores plus a neural-ODE repeat-consumption term."""

from .model import ModelConfig, RecodeModel
from .trainer import TrainConfig, train

__all__ = ["ModelConfig", "RecodeModel", "TrainConfig", "train"]
