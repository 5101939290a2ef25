"""Pixel-level classified super-resolution.

One shared backbone, a bank of per-pixel upsamplers of decreasing capacity and
a per-pixel classifier that routes every HR pixel to one of them.
"""
from .core import bicubic_downsample, bilinear_upsample, make_query_grid, nearest_feature
from .inference import (
    InferencePolicy,
    compute_cost_vector,
    dispatch_adm,
    dispatch_k,
    kmeans_1d,
    refine,
    super_resolve,
    tile_process,
)
from .models import PCSRModel, StateError, build_model

__version__ = "0.1.0"
