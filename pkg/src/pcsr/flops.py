"""Analytic FLOPs accounting.

Convention: one multiply-accumulate counts as 2 FLOPs; bias additions and
activations are not counted.
"""
import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class FlopsReport:
    backbone_flops: int
    classifier_flops: int
    per_upsampler_flops: tuple
    refinement_flops: int
    total: int
    lr_size: tuple
    hr_size: tuple
    histogram: tuple

    def to_dict(self):
        d = asdict(self)
        for key in ("per_upsampler_flops", "lr_size", "hr_size", "histogram"):
            d[key] = list(d[key])
        return d

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def conv_flops(layer, h, w):
    return 2 * layer.kernel ** 2 * layer.in_channels * layer.out_channels * h * w


def backbone_flops(spec, h, w):
    return sum(conv_flops(layer, h, w) for layer in spec.layers)


def mlp_flops_per_pixel(spec):
    return 2 * sum(d_in * d_out for d_in, d_out in spec.layer_dims)


def upsampler_flops_per_pixel(model):
    return [mlp_flops_per_pixel(s) for s in model.upsampler_specs]


def refinement_flops(window_sizes):
    """Window mean per replaced pixel: (n - 1) adds + 1 divide, per channel."""
    return int(3 * np.sum(window_sizes))


def model_flops(model, histogram, lr_size, hr_size, classifier=True, refinement=0):
    """FLOPs of one full-image pass given how many pixels went to each upsampler."""
    h, w = lr_size
    H, W = hr_size
    hist = [int(c) for c in histogram]
    if len(hist) < model.num_classes:
        hist += [0] * (model.num_classes - len(hist))
    if len(hist) != model.num_classes or any(c < 0 for c in hist):
        raise ValueError(f"histogram {histogram!r} invalid for M={model.num_classes}")
    if sum(hist) != H * W:
        raise ValueError(f"histogram sums to {sum(hist)}, expected {H * W} HR pixels")
    per_pixel = upsampler_flops_per_pixel(model)
    bb = backbone_flops(model.backbone, h, w)
    clf = mlp_flops_per_pixel(model.classifier_spec) * H * W if classifier else 0
    ups = tuple(c * p for c, p in zip(hist, per_pixel))
    refinement = int(refinement)
    return FlopsReport(bb, clf, ups, refinement, bb + clf + sum(ups) + refinement,
                       (h, w), (H, W), tuple(hist))
