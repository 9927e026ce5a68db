"""Gamma speckle simulation, a from-scratch CNN despeckler, and despeckling metrics."""

from .errors import (CapacityError, ConfigMismatchError, HeaderError, ParseError, ShapeError,
                     SpeckleLabError, StateError, TrainingAborted, TruncatedError,
                     UnsupportedFormatError, VersionError)
from .imageio import load_image, save_image
from .loss import (LossConfig, Pmf, hard_histogram, kl_divergence, mse, reference_gamma_pmf,
                   soft_histogram, total_loss)
from .metrics import IDENTICAL, MetricsReport, enl, psnr, ratio_image, ratio_kl, snr, ssim
from .model import Model, ModelConfig, load_checkpoint, predict_noise, save_checkpoint
from .nn import (ConvSpec, LayerParams, OptimState, Tape, batchnorm_forward, conv2d_forward,
                 he_init, relu_forward, sgd_momentum_step)
from .pipeline import (DatasetConfig, ExperimentConfig, TrainConfig, build_dataset,
                       bundled_scene_path, despeckle_image, evaluate_corpus, load_config, load_dataset, train)
from .speckle import (PatchSpec, SpeckleConfig, apply_speckle, extract_patches, gamma_pdf,
                      gamma_speckle_field, synthetic_scene)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigMismatchError",
    "ConvSpec",
    "DatasetConfig",
    "ExperimentConfig",
    "HeaderError",
    "IDENTICAL",
    "LayerParams",
    "LossConfig",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "OptimState",
    "ParseError",
    "PatchSpec",
    "Pmf",
    "ShapeError",
    "SpeckleConfig",
    "SpeckleLabError",
    "StateError",
    "Tape",
    "TrainConfig",
    "TrainingAborted",
    "TruncatedError",
    "UnsupportedFormatError",
    "VersionError",
    "apply_speckle",
    "batchnorm_forward",
    "build_dataset",
    "bundled_scene_path",
    "conv2d_forward",
    "despeckle_image",
    "enl",
    "evaluate_corpus",
    "extract_patches",
    "gamma_pdf",
    "gamma_speckle_field",
    "hard_histogram",
    "he_init",
    "kl_divergence",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "load_image",
    "mse",
    "predict_noise",
    "psnr",
    "ratio_image",
    "ratio_kl",
    "reference_gamma_pmf",
    "relu_forward",
    "save_checkpoint",
    "save_image",
    "sgd_momentum_step",
    "snr",
    "soft_histogram",
    "ssim",
    "synthetic_scene",
    "total_loss",
    "train",
]
