"""Anti-aliased pooling, shift-equivariance metrics and a small CNN engine."""

from ._core import (
    ArgumentError,
    BlurKernel,
    FormatError,
    Network,
    ShapeError,
    all_kernels,
    apply_blur,
    avg_pool,
    blur_pool,
    blur_upsample,
    feature_distance,
    filter_tv,
    image_tv,
    kernel_2d,
    make_kernel,
    max_blur_pool,
    max_pool,
    psnr,
    run_cli,
    shift_circular,
    toy1d,
    toy_images,
)

__all__ = [
    "ArgumentError",
    "BlurKernel",
    "FormatError",
    "Network",
    "ShapeError",
    "all_kernels",
    "apply_blur",
    "avg_pool",
    "blur_pool",
    "blur_upsample",
    "feature_distance",
    "filter_tv",
    "image_tv",
    "kernel_2d",
    "make_kernel",
    "max_blur_pool",
    "max_pool",
    "psnr",
    "run_cli",
    "shift_circular",
    "toy1d",
    "toy_images",
]
