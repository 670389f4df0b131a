"""Model assets: in-memory form, validation, EHMA file format and synthesis."""

from .asset import ROOT_PARENT, ModelAsset, validate_asset
from .io import decode_asset, encode_asset, load_asset, save_asset
from .synth import synth_model

__all__ = [
    "ROOT_PARENT",
    "ModelAsset",
    "decode_asset",
    "encode_asset",
    "load_asset",
    "save_asset",
    "synth_model",
    "validate_asset",
]
