"""Low-dose CT denoising with a residual encoder-decoder network."""

from ._redct import (
    DivergedError,
    InvalidConfig,
    RedctError,
    RedModel,
    ShapeMismatch,
    default_detectors,
    evaluate,
    fbp,
    make_pair,
    make_phantom,
    psnr,
    radon,
    read_image,
    rmse,
    simulate_low_dose,
    ssim,
    train,
    write_rtf,
)

__all__ = [
    "DivergedError",
    "InvalidConfig",
    "RedctError",
    "RedModel",
    "ShapeMismatch",
    "default_detectors",
    "evaluate",
    "fbp",
    "make_pair",
    "make_phantom",
    "psnr",
    "radon",
    "read_image",
    "rmse",
    "simulate_low_dose",
    "ssim",
    "train",
    "write_rtf",
]
