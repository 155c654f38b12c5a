"""Spatial-spectral transformer for hyperspectral denoising, on a small numpy autodiff engine."""

from .autodiff import Tensor, backward, grad_check, no_grad
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    SstError,
)
from .hsi import HsiCube, load_cube, save_cube, synthetic_cube
from .metrics import MetricsReport, psnr, sam, ssim
from .noise import NoiseRecord, NoiseSpec, apply_noise
from .sst import SstConfig, SstModel, count_flops, count_params, sst_forward

__version__ = "0.1.0"
