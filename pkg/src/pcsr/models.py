"""Backbone, classifier and upsampler bank, with numpy forward passes.

Parameters live in a flat ordered ``name -> float32 array`` mapping so that the
same layout feeds inference, the torch training graph and checkpoints:

* ``backbone.{l}.weight`` (C_out, C_in, k, k), ``backbone.{l}.bias`` (C_out,)
* ``upsampler.{j}.{l}.weight`` (d_in, d_out), ``upsampler.{j}.{l}.bias``
* ``classifier.{l}.weight`` / ``classifier.{l}.bias``
"""
from dataclasses import dataclass, field

import numpy as np

from . import core, kernels

ACTIVATIONS = ("relu", "none")


class StateError(RuntimeError):
    """Operation needs a module that has not been attached or trained yet."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    activation: str = "relu"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd integer, got {self.kernel}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class BackboneSpec:
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise ValueError("backbone needs at least one layer")
        if self.layers[0].in_channels != 3:
            raise ValueError("first backbone layer must take 3 input channels")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("backbone layer channel counts do not chain")

    @property
    def feature_dim(self):
        return self.layers[-1].out_channels

    @classmethod
    def default(cls, feature_dim=16, channels=(16, 16, 16), kernel=3):
        dims = [3, *channels, feature_dim]
        layers = [
            ConvSpec(dims[i], dims[i + 1], kernel, "relu" if i < len(dims) - 2 else "none")
            for i in range(len(dims) - 1)
        ]
        return cls(tuple(layers))


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if min((self.input_dim, self.output_dim, *self.hidden_dims)) < 1:
            raise ValueError(f"MLP dimensions must be positive: {self}")
        if self.activation != "relu":
            raise ValueError("only relu hidden activations are supported")

    @property
    def layer_dims(self):
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class PCSRModel:
    """Backbone + classifier + ordered upsampler bank (index 0 is heaviest).

    ``upsampler_specs`` always lists all M upsamplers; parameters exist only
    for attached ones. ``trained_stage`` is -1 for a fresh model.
    """

    backbone: BackboneSpec
    upsampler_specs: tuple
    classifier_spec: MlpSpec
    scale: int
    params: dict = field(default_factory=dict)
    trained_stage: int = -1

    @property
    def num_classes(self):
        return len(self.upsampler_specs)

    @property
    def feature_dim(self):
        return self.backbone.feature_dim

    @property
    def has_classifier(self):
        return "classifier.0.weight" in self.params

    def has_upsampler(self, j):
        return f"upsampler.{j}.0.weight" in self.params

    @property
    def attached_upsamplers(self):
        return [j for j in range(self.num_classes) if self.has_upsampler(j)]

    def module_params(self, module):
        """Parameter names owned by ``module`` (e.g. ``backbone``, ``upsampler.1``)."""
        prefix = module + "."
        return [n for n in self.params if n.startswith(prefix)]

    def mlp_arrays(self, prefix, n_layers):
        weights = tuple(self.params[f"{prefix}.{l}.weight"] for l in range(n_layers))
        biases = tuple(self.params[f"{prefix}.{l}.bias"] for l in range(n_layers))
        return weights, biases

    def copy(self):
        return PCSRModel(self.backbone, self.upsampler_specs, self.classifier_spec, self.scale,
                         {k: v.copy() for k, v in self.params.items()}, self.trained_stage)

    def spec_dict(self):
        return {
            "scale": self.scale,
            "num_classes": self.num_classes,
            "backbone": [
                {"in_channels": l.in_channels, "out_channels": l.out_channels,
                 "kernel": l.kernel, "activation": l.activation}
                for l in self.backbone.layers
            ],
            "upsamplers": [list(s.hidden_dims) for s in self.upsampler_specs],
            "classifier": list(self.classifier_spec.hidden_dims),
        }

    @classmethod
    def from_spec_dict(cls, spec):
        backbone = BackboneSpec(tuple(ConvSpec(**l) for l in spec["backbone"]))
        d_in = backbone.feature_dim + 2
        ups = tuple(MlpSpec(d_in, tuple(h), 3) for h in spec["upsamplers"])
        if len(ups) != spec["num_classes"]:
            raise ValueError("num_classes does not match the number of upsamplers")
        clf = MlpSpec(d_in, tuple(spec["classifier"]), len(ups))
        return cls(backbone, ups, clf, int(spec["scale"]))


def build_model(scale=2, feature_dim=16, backbone_channels=(16, 16, 16), kernel=3,
                upsampler_hidden=((64, 64), (16,)), classifier_hidden=(16,), seed=0):
    """Fresh model with the backbone and the heaviest upsampler initialized."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if len(upsampler_hidden) < 1:
        raise ValueError("need at least one upsampler")
    backbone = BackboneSpec.default(feature_dim, tuple(backbone_channels), kernel)
    d_in = feature_dim + 2
    ups = tuple(MlpSpec(d_in, tuple(h), 3) for h in upsampler_hidden)
    clf = MlpSpec(d_in, tuple(classifier_hidden), len(ups))
    model = PCSRModel(backbone, ups, clf, int(scale))
    rng = np.random.default_rng(seed)
    init_backbone(model, rng)
    attach_upsampler(model, 0, rng)
    return model


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_backbone(model, rng):
    for l, layer in enumerate(model.backbone.layers):
        fan_in = layer.in_channels * layer.kernel ** 2
        model.params[f"backbone.{l}.weight"] = _uniform(
            rng, fan_in, (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel))
        model.params[f"backbone.{l}.bias"] = _uniform(rng, fan_in, (layer.out_channels,))


def _init_mlp(model, prefix, spec, rng):
    for l, (d_in, d_out) in enumerate(spec.layer_dims):
        model.params[f"{prefix}.{l}.weight"] = _uniform(rng, d_in, (d_in, d_out))
        model.params[f"{prefix}.{l}.bias"] = _uniform(rng, d_in, (d_out,))


def attach_upsampler(model, j, rng):
    if not 0 <= j < model.num_classes:
        raise IndexError(f"upsampler index {j} out of range [0, {model.num_classes})")
    _init_mlp(model, f"upsampler.{j}", model.upsampler_specs[j], rng)


def attach_classifier(model, rng):
    _init_mlp(model, "classifier", model.classifier_spec, rng)


def backbone_forward(model, lr):
    """LR image (h x w x 3) -> feature map (h x w x D)."""
    lr = np.asarray(lr, dtype=np.float64)
    if lr.ndim != 3 or lr.shape[2] != model.backbone.layers[0].in_channels:
        raise ValueError(f"expected h x w x 3 input, got {lr.shape}")
    x = np.ascontiguousarray(lr.transpose(2, 0, 1))
    for l, layer in enumerate(model.backbone.layers):
        x = kernels.conv2d(x, model.params[f"backbone.{l}.weight"].astype(np.float64),
                           model.params[f"backbone.{l}.bias"].astype(np.float64))
        if layer.activation == "relu":
            np.maximum(x, 0.0, out=x)
    return x.transpose(1, 2, 0)


def _mlp(model, prefix, spec, inputs):
    weights, biases = model.mlp_arrays(prefix, len(spec.layer_dims))
    return kernels.mlp_forward(inputs, tuple(w.astype(np.float64) for w in weights),
                               tuple(b.astype(np.float64) for b in biases))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classifier_logits(model, inputs):
    if not model.has_classifier:
        raise StateError("model has no classifier (train stage 1 first)")
    return _mlp(model, "classifier", model.classifier_spec, inputs)


def classifier_forward(model, features, grid, index=None):
    """Per-query class probabilities (N x M), rows on the simplex."""
    return softmax(classifier_logits(model, core.gather_queries(features, grid, index)))


def upsampler_apply(model, j, inputs):
    if not 0 <= j < model.num_classes:
        raise IndexError(f"upsampler index {j} out of range [0, {model.num_classes})")
    if not model.has_upsampler(j):
        raise StateError(f"upsampler {j} is not attached")
    return _mlp(model, f"upsampler.{j}", model.upsampler_specs[j], inputs)


def upsampler_forward(model, j, features, grid, index=None):
    """Residual RGB predicted by upsampler ``j`` for the selected queries."""
    return upsampler_apply(model, j, core.gather_queries(features, grid, index))


def blended_forward(model, features, grid, probs=None):
    """Probability-weighted sum of every attached upsampler's residual."""
    inputs = core.gather_queries(features, grid)
    if probs is None:
        probs = softmax(classifier_logits(model, inputs))
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (len(grid), model.num_classes):
        raise ValueError(f"probabilities must be {len(grid)} x {model.num_classes}, got {probs.shape}")
    out = np.zeros((len(grid), 3))
    for j in range(model.num_classes):
        out += probs[:, j:j + 1] * upsampler_apply(model, j, inputs)
    return out


def compose_sr(lr, residual, hr_size):
    """clip(bilinear(lr) + residual, 0, 1) as an H x W x 3 image."""
    H, W = hr_size
    residual = np.asarray(residual, dtype=np.float64)
    if residual.size != H * W * 3:
        raise ValueError(f"residual has {residual.size} values, expected {H * W * 3}")
    up = core.bilinear_upsample(lr, (H, W))
    return np.clip(up + residual.reshape(H, W, 3), 0.0, 1.0)
