"""Tensor ring functional decomposition for multi-dimensional signal recovery.

Continuous factor networks parameterize the slices of a tensor-ring
decomposition, optionally through a fixed wide basis (the "reptrfd" variant),
and are fit with Adam to masked, noisy, downsampled, or scattered
observations. Analysis harnesses verify the spectral-propagation, gradient-
ratio, variance-preservation, and Lipschitz properties of the construction.
"""

from .errors import (ConfigError, FormatError, NumericError, RangeError,
                     ShapeError, TrfdError)
from .tensor import (TRCores, dft_matrix, frequency_magnitudes, lowpass_cores,
                     mode_k_dft, mode_k_idft, mode_k_product, tr_contract,
                     tr_entry)
from .autodiff import (AutodiffError, Node, Tape, apply_primitive,
                       supported_primitives)
from .model import (FactorModel, ModelConfig, build_cores, eval_point,
                    eval_points, factor_slice, init_model, latent_slice,
                    lipschitz_bound, load_checkpoint, save_checkpoint,
                    spectral_norm)
from .objectives import (PointSet, RegWeights, downsample, masked_mse, sstv,
                         task_loss, tv)
from .trainer import AdamState, RecoveryTask, TrainTrace, adam_step, \
    grid_coordinates, train
from .metrics import nrmse, psnr, ssim
from .analysis import (gradient_ratio_experiment, lipschitz_check,
                       lowpass_attenuation_experiment, spectral_bound_check,
                       variance_preservation_check)
from .io import (add_noise, generate_mask, load_observation, load_pointcloud,
                 load_png, load_task_config, load_tensor, save_png,
                 save_pointcloud, save_tensor)
from .cli import cli_main

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AutodiffError", "ConfigError", "FactorModel", "FormatError",
    "ModelConfig", "Node", "NumericError", "PointSet", "RangeError",
    "RecoveryTask", "RegWeights", "ShapeError", "TRCores", "Tape",
    "TrainTrace", "TrfdError", "adam_step", "add_noise", "apply_primitive",
    "build_cores", "cli_main", "dft_matrix", "downsample", "eval_point",
    "eval_points", "factor_slice", "frequency_magnitudes", "generate_mask",
    "gradient_ratio_experiment", "grid_coordinates", "init_model",
    "latent_slice", "lipschitz_bound", "lipschitz_check", "load_checkpoint",
    "load_observation", "load_pointcloud", "load_png", "load_task_config",
    "load_tensor", "lowpass_attenuation_experiment", "lowpass_cores",
    "masked_mse", "mode_k_dft", "mode_k_idft", "mode_k_product", "nrmse",
    "psnr", "save_checkpoint", "save_png", "save_pointcloud", "save_tensor",
    "spectral_bound_check", "spectral_norm", "ssim", "sstv",
    "supported_primitives", "task_loss", "tr_contract", "tr_entry", "train",
    "tv", "variance_preservation_check",
]
