"""Empirical-centroid super-resolution training lab."""
from .model import ModelConfig, ModelParams
from .objectives import ObjectiveMode, TrainingPair, build_pair
from .resample import ResizeSpec, resize
from .trainer import TrainConfig, Trainer, train

__all__ = [
    "ModelConfig", "ModelParams", "ObjectiveMode", "TrainingPair", "build_pair",
    "ResizeSpec", "resize", "TrainConfig", "Trainer", "train",
]
