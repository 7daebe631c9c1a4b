"""DeepSense: CNN + GRU sensor-fusion models for mobile time-series sensing, on a small numpy autodiff core."""

from .kernels import BACKEND as KERNEL_BACKEND
from .model import DeepSenseConfig, DeepSenseModel, build, count_params, predict_class
from .training import (LossSpec, OptimConfig, gradient_check_model, load_checkpoint, recalibrate_batch_norm,
                       save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "DeepSenseConfig",
    "DeepSenseModel",
    "LossSpec",
    "OptimConfig",
    "build",
    "count_params",
    "gradient_check_model",
    "load_checkpoint",
    "predict_class",
    "recalibrate_batch_norm",
    "save_checkpoint",
    "train",
]
