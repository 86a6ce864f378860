"""denobench: a CPU benchmark suite for convolutional grayscale denoisers.

Implements CNN-DAE, CADTra, and DCMIEDNet on top of a self-contained
reverse-mode differentiation engine, trains them against Gaussian
corruption, and reports PSNR/SSIM grids in CSV and Markdown.
"""

from .data import (DatasetSplit, ImageSample, NoiseConfig, NoisyPair,
                   add_gaussian_noise, generate_phantoms, load_images, split_dataset)
from .metrics import MetricStats, aggregate, psnr, ssim
from .models import (ARCHITECTURES, LayerSpec, ModelGraph, build_cadtra,
                     build_cnn_dae, build_dcmiednet, build_model, forward, param_count)
from .optim import AdamState, adam_step, init_adam
from .tensor import ShapeError, Tape, Tensor, backward
from .training import (EarlyStopping, EvalReport, TrainConfig, TrainHistory,
                       evaluate, load_checkpoint, restore_weights, save_checkpoint,
                       train)

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "AdamState",
    "DatasetSplit",
    "EarlyStopping",
    "EvalReport",
    "ImageSample",
    "LayerSpec",
    "MetricStats",
    "ModelGraph",
    "NoiseConfig",
    "NoisyPair",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "add_gaussian_noise",
    "aggregate",
    "backward",
    "build_cadtra",
    "build_cnn_dae",
    "build_dcmiednet",
    "build_model",
    "evaluate",
    "forward",
    "generate_phantoms",
    "init_adam",
    "load_checkpoint",
    "load_images",
    "param_count",
    "psnr",
    "restore_weights",
    "save_checkpoint",
    "split_dataset",
    "ssim",
    "train",
    "__version__",
]
