"""Python bindings for the fully convolutional segmentation core."""

from ._core import (
    bilinear_profile,
    bilinear_upsample,
    chain_fields,
    compute_metrics,
    conv2d,
    dilate_filter,
    effective_coefficients,
    equivalent_momentum,
    generate_shapes,
    iu_upper_bound,
    probe_net,
)

__all__ = [
    "bilinear_profile",
    "bilinear_upsample",
    "chain_fields",
    "compute_metrics",
    "conv2d",
    "dilate_filter",
    "effective_coefficients",
    "equivalent_momentum",
    "generate_shapes",
    "iu_upper_bound",
    "probe_net",
]
