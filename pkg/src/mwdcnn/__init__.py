"""Multi-stage wavelet + dynamic-convolution image denoiser.

A small numpy reverse-mode tensor engine underneath, the three-stage
denoising network on top, plus training, checkpointing, data synthesis,
quality metrics and a command line. Everything is seeded and CPU-only.
"""

__version__ = "0.1.0"

from .engine import Tensor, Tape, DTYPES
from .wavelet import dwt2d, idwt2d
from .model import ModelConfig, MwdcnnModel, parse_config_text, count_params_flops
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError
from .training import (TrainPlan, train, mse_loss, charbonnier_loss,
                       AdamState, adam_step, NonFiniteLossError)
from .data import (ImageBuffer, PatchDataset, load_image, save_image,
                   add_awgn, quantize_u8, luminance, ImageFormatError)
from .metrics import psnr, ssim, QualityReport
from .gradcheck import grad_check, run_standard_suite

__all__ = [
    "Tensor", "Tape", "DTYPES", "dwt2d", "idwt2d",
    "ModelConfig", "MwdcnnModel", "parse_config_text", "count_params_flops",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "TrainPlan", "train", "mse_loss", "charbonnier_loss",
    "AdamState", "adam_step", "NonFiniteLossError",
    "ImageBuffer", "PatchDataset", "load_image", "save_image",
    "add_awgn", "quantize_u8", "luminance", "ImageFormatError",
    "psnr", "ssim", "QualityReport",
    "grad_check", "run_standard_suite",
    "__version__",
]
