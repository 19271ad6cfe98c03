from ._core import (
    backbone_pyramid,
    FormatError,
    InputError,
    LoadError,
    StructuralError,
    exposure_ratios,
    float_to_rgbe,
    handcrafted_pyramid,
    ms_hdr_transform,
    mu_law,
    progressive_match,
    psnr_linear,
    psnr_mu,
    read_hdr,
    rgbe_to_float,
    run_cli,
    saturation_mask,
    ssim,
    synthesize_scene,
    write_hdr,
)

__all__ = [
    "backbone_pyramid",
    "FormatError",
    "InputError",
    "LoadError",
    "StructuralError",
    "exposure_ratios",
    "float_to_rgbe",
    "handcrafted_pyramid",
    "ms_hdr_transform",
    "mu_law",
    "progressive_match",
    "psnr_linear",
    "psnr_mu",
    "read_hdr",
    "rgbe_to_float",
    "run_cli",
    "saturation_mask",
    "ssim",
    "synthesize_scene",
    "write_hdr",
]
