"""Hypercomplex B-cos networks."""

from ._core import (
    Model,
    ModelConfig,
    Variant,
    decode_color,
    encode_input,
    explain,
    hamilton_product,
    load_checkpoint,
    synth_shapes,
)

__all__ = [
    "Model",
    "ModelConfig",
    "Variant",
    "decode_color",
    "encode_input",
    "explain",
    "hamilton_product",
    "load_checkpoint",
    "synth_shapes",
]
