"""Complex-valued cascaded CNN for parallel MRI reconstruction, in plain numpy."""
from .autodiff import GradCheckReport, Parameter, Tape, grad_check
from .complex_core import complex_conv2d, fft2c, ifft2c
from .datasim import (CoilProfile, MultiCoilSample, gen_coils, gen_phantom, make_dataset,
                      read_dataset, simulate_sample, write_dataset)
from .errors import (DeepComplexError, FileFormatError, GradientError, MaskError, ShapeError,
                     TrainingDiverged)
from .metrics import combine_magnitude, psnr, sos_combine, ssim, walsh_combine, walsh_weights
from .network import (CascadeModel, ModelConfig, cascade_forward, count_parameters, load_checkpoint,
                      parameter_budget, real_conv_variant, save_checkpoint)
from .sampling import (MaskKind, SamplingMask, apply_mask, gen_poisson_2d, gen_random_2d,
                       gen_uniform_1d, gen_vardens_1d, make_mask, read_mask, write_mask)
from .training import LossLog, TrainConfig, ablation_run, adam_step, evaluate, mae_loss, reconstruct, train

__all__ = [
    "GradCheckReport", "Parameter", "Tape", "grad_check",
    "complex_conv2d", "fft2c", "ifft2c",
    "CoilProfile", "MultiCoilSample", "gen_coils", "gen_phantom", "make_dataset", "read_dataset",
    "simulate_sample", "write_dataset",
    "DeepComplexError", "FileFormatError", "GradientError", "MaskError", "ShapeError", "TrainingDiverged",
    "combine_magnitude", "psnr", "sos_combine", "ssim", "walsh_combine", "walsh_weights",
    "CascadeModel", "ModelConfig", "cascade_forward", "count_parameters", "load_checkpoint",
    "parameter_budget", "real_conv_variant", "save_checkpoint",
    "MaskKind", "SamplingMask", "apply_mask", "gen_poisson_2d", "gen_random_2d", "gen_uniform_1d",
    "gen_vardens_1d", "make_mask", "read_mask", "write_mask",
    "LossLog", "TrainConfig", "ablation_run", "adam_step", "evaluate", "mae_loss", "reconstruct", "train",
]
