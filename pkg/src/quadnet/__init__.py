"""Outlier-aware classification by joint quadruplet metric learning and focal loss."""

from .data import Dataset, SynthConfig, generate_synthetic, load_csv, load_dataset, save_csv, split
from .evaluation import MetricsReport, evaluate
from .losses import LossConfig, class_weight, combined_loss, focal_loss, quadruplet_loss
from .model import Model, ModelConfig, init_model, load_checkpoint, save_checkpoint
from .numerics import Tensor, backward, finite_diff_check
from .sampling import SamplerConfig, mining_fraction
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LossConfig",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "SamplerConfig",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "backward",
    "class_weight",
    "combined_loss",
    "evaluate",
    "finite_diff_check",
    "fit",
    "focal_loss",
    "generate_synthetic",
    "init_model",
    "load_checkpoint",
    "load_csv",
    "load_dataset",
    "mining_fraction",
    "quadruplet_loss",
    "save_checkpoint",
    "save_csv",
    "split",
]
