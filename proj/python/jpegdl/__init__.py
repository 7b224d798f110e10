"""Differentiable JPEG layer with a soft quantizer."""

from ._core import (
    ArgumentError,
    FormatError,
    QuantTables,
    ValidationError,
    check_layer_gradients,
    check_quantizer_gradients,
    cpmf,
    dct_block,
    init_magnitude,
    init_ones,
    jpeg_layer,
    jpeg_layer_backward,
    levels_for_bits,
    quantize_grad,
    quantize_soft,
    quantize_uniform,
    synthetic_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
