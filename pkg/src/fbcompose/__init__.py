"""Parameter-free classical image filtering via learned basis blending.

Build a filtered basis (one filter's outputs under several sampled parameter
configurations), then train a tiny dual-branch linear model that blends the
basis and its residuals into a result that beats any single configuration.
"""

__version__ = "0.1.0"

from .basis import (
    BUILTIN_PRESETS,
    Candidate,
    FBCache,
    FilteredBasis,
    ParamRange,
    ResidualBasis,
    bilateral_candidate_grid,
    bilateral_preset,
    build_basis,
    build_residuals,
    calibrate,
    dis_grid,
    iis_select,
    make_config,
    median_preset,
    read_preset,
    rgf_preset,
    write_preset,
)
from .filters import (
    Bilateral,
    FilterConfig,
    Gaussian,
    Median,
    RollingGuidance,
    apply,
    bilateral,
    format_config,
    gaussian_blur,
    joint_bilateral,
    median,
    parse_config,
    rolling_guidance,
)
from .image import Image
from .metrics import MetricReport, psnr, ssim, total_variation
from .model import (
    BranchWeights,
    CompositionModel,
    ForwardOutputs,
    LossWeights,
    MergeWeights,
    ModelGradients,
    forward,
    gradients,
    init_model,
    load_model,
    save_model,
    total_loss,
)
from .noise import add_gaussian_noise, add_impulse_noise
from .pnm import read_image, write_image
from .trainer import (
    AblationReport,
    AdamState,
    DatasetSpec,
    Sample,
    TrainHistory,
    TrainingConfig,
    ablate_residual,
    adam_step,
    evaluate,
    lr_at,
    train,
)

__all__ = [
    "BUILTIN_PRESETS",
    "AblationReport",
    "AdamState",
    "Bilateral",
    "BranchWeights",
    "Candidate",
    "CompositionModel",
    "DatasetSpec",
    "FBCache",
    "FilterConfig",
    "FilteredBasis",
    "ForwardOutputs",
    "Gaussian",
    "Image",
    "LossWeights",
    "Median",
    "MergeWeights",
    "MetricReport",
    "ModelGradients",
    "ParamRange",
    "ResidualBasis",
    "RollingGuidance",
    "Sample",
    "TrainHistory",
    "TrainingConfig",
    "ablate_residual",
    "adam_step",
    "add_gaussian_noise",
    "add_impulse_noise",
    "apply",
    "bilateral",
    "bilateral_candidate_grid",
    "bilateral_preset",
    "build_basis",
    "build_residuals",
    "calibrate",
    "dis_grid",
    "evaluate",
    "format_config",
    "forward",
    "gaussian_blur",
    "gradients",
    "iis_select",
    "init_model",
    "joint_bilateral",
    "load_model",
    "lr_at",
    "make_config",
    "median",
    "median_preset",
    "parse_config",
    "psnr",
    "read_image",
    "read_preset",
    "rgf_preset",
    "rolling_guidance",
    "save_model",
    "ssim",
    "total_loss",
    "total_variation",
    "train",
    "write_image",
    "write_preset",
]
