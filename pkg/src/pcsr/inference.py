"""FLOPs-aware per-pixel dispatch and the end-to-end super-resolution pipeline."""
from dataclasses import dataclass

import numpy as np

from . import core, kernels
from .flops import model_flops, refinement_flops, upsampler_flops_per_pixel
from .models import StateError, backbone_forward, classifier_logits, compose_sr, softmax, upsampler_apply

POLICY_MODES = ("fixed", "k", "adm")


@dataclass(frozen=True)
class CostVector:
    costs: np.ndarray
    reference_size: tuple


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray
    num_classes: int

    @property
    def histogram(self):
        return np.bincount(self.labels.ravel(), minlength=self.num_classes)


@dataclass(frozen=True)
class InferencePolicy:
    mode: str
    cls: int = 0
    k: float = 0.0
    refine: bool = True

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.mode == "fixed" and self.cls < 0:
            raise ValueError(f"class index must be non-negative, got {self.cls}")
        if self.mode == "k" and not np.isfinite(self.k):
            raise ValueError(f"k must be finite, got {self.k}")

    @classmethod
    def fixed_class(cls, j, refine=True):
        return cls("fixed", cls=int(j), refine=refine)

    @classmethod
    def k_dispatch(cls, k, refine=True):
        return cls("k", k=float(k), refine=refine)

    @classmethod
    def adm(cls, refine=True):
        return cls("adm", refine=refine)

    @classmethod
    def parse(cls, text, refine=True):
        """Parse ``fixed:J``, ``k:V`` or ``adm``."""
        head, _, arg = text.strip().partition(":")
        if head == "adm" and not arg:
            return cls.adm(refine)
        if head == "fixed" and arg:
            return cls.fixed_class(int(arg), refine)
        if head == "k" and arg:
            return cls.k_dispatch(float(arg), refine)
        raise ValueError(f"bad policy {text!r}; expected fixed:J, k:V or adm")

    def describe(self):
        if self.mode == "fixed":
            return f"fixed:{self.cls}"
        if self.mode == "k":
            return f"k:{self.k:g}"
        return "adm"


@dataclass(frozen=True)
class SRResult:
    sr: np.ndarray
    assignment: Assignment
    flops: object
    probs: np.ndarray = None
    refined: np.ndarray = None


def n_heavy(num_classes):
    """Classes below this index count as heavy."""
    return (num_classes + 1) // 2


def compute_cost_vector(model, h0=8, w0=8):
    """Softmax over max-normalized upsampler FLOPs at LR resolution (h0, w0)."""
    if model.num_classes < 2:
        raise ValueError("cost vector needs at least two upsamplers")
    hr_pixels = h0 * model.scale * w0 * model.scale
    flops = np.array([f * hr_pixels for f in upsampler_flops_per_pixel(model)], dtype=np.float64)
    if np.any(flops <= 0):
        raise ValueError(f"upsampler with zero FLOPs: {flops}")
    return CostVector(softmax(flops / flops.max()), (h0, w0))


def dispatch_k(probs, cost, k):
    """label = argmax_j (p_j - k * cost_j); ties go to the lighter class."""
    probs = np.asarray(probs, dtype=np.float64)
    costs = np.asarray(getattr(cost, "costs", cost), dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != costs.shape[0]:
        raise ValueError(f"probabilities {probs.shape} do not match {costs.shape[0]} costs")
    if not np.isfinite(k):
        raise ValueError(f"k must be finite, got {k}")
    scores = probs - k * costs[None, :]
    m = probs.shape[1]
    # argmax on the reversed columns returns the last maximum
    labels = m - 1 - np.argmax(scores[:, ::-1], axis=1)
    return Assignment(labels.astype(np.int64), m)


def kmeans_1d(values, n_clusters, max_iters=20):
    """Deterministic Lloyd clustering of scalars.

    Returns ``(centroids, labels, iterations, converged)``. Empty clusters keep
    their previous centroid.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if n_clusters < 1:
        raise ValueError(f"n_clusters must be >= 1, got {n_clusters}")
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("kmeans_1d needs at least one value")
    return kernels.kmeans_1d(values, int(n_clusters), int(max_iters))


def difficulty(probs):
    """Probability mass on the heavy half of the upsampler bank."""
    probs = np.asarray(probs, dtype=np.float64)
    return probs[:, : n_heavy(probs.shape[1])].sum(axis=1)


def dispatch_adm(probs, num_classes=None, max_iters=20):
    """Cluster per-pixel difficulty; highest-centroid cluster goes to U_0."""
    probs = np.asarray(probs, dtype=np.float64)
    m = probs.shape[1] if num_classes is None else int(num_classes)
    if probs.ndim != 2 or probs.shape[1] != m:
        raise ValueError(f"probabilities {probs.shape} do not match M={m}")
    centroids, labels, iterations, _ = kmeans_1d(difficulty(probs), m, max_iters)
    order = np.argsort(-centroids, kind="stable")
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    return Assignment(rank[labels], m), iterations


def refine(sr, labels, num_classes, return_mask=False):
    """Smooth light pixels that border heavy ones (3x3 mean, one pass)."""
    sr = np.asarray(sr, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != sr.shape[:2]:
        raise ValueError(f"assignment shape {labels.shape} does not match image {sr.shape[:2]}")
    out, mask, count = kernels.refine(sr, labels.astype(np.int64), n_heavy(num_classes))
    if return_mask:
        return out, mask, count
    return out


def _check_upsamplers(model, classes):
    for j in classes:
        if not 0 <= j < model.num_classes:
            raise ValueError(f"class {j} out of range for M={model.num_classes}")
        if not model.has_upsampler(j):
            raise StateError(f"upsampler {j} is not trained")


def render(model, lr, labels, *, inputs=None, features=None, refine_output=True,
           classifier_used=False, probs=None):
    """Evaluate each class's pixels in one batched upsampler call and compose."""
    lr = np.asarray(lr, dtype=np.float64)
    h, w = lr.shape[:2]
    H, W = h * model.scale, w * model.scale
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size != H * W:
        raise ValueError(f"assignment has {labels.size} labels, expected {H * W}")
    if inputs is None:
        if features is None:
            features = backbone_forward(model, lr)
        inputs = core.gather_queries(features, core.make_query_grid((H, W), (h, w)))
    classes = np.unique(labels)
    _check_upsamplers(model, classes)
    residual = np.empty((H * W, 3))
    for j in classes:
        idx = np.flatnonzero(labels == j)
        residual[idx] = upsampler_apply(model, int(j), inputs[idx])
    sr = compose_sr(lr, residual, (H, W))
    grid_labels = labels.reshape(H, W)
    refined = None
    refine_cost = 0
    if refine_output:
        sr, refined, count = refine(sr, grid_labels, model.num_classes, return_mask=True)
        refine_cost = refinement_flops(count[refined])
    assignment = Assignment(grid_labels, model.num_classes)
    report = model_flops(model, assignment.histogram, (h, w), (H, W),
                         classifier=classifier_used, refinement=refine_cost)
    return SRResult(sr, assignment, report, probs, refined)


def predict_probs(model, lr):
    """Backbone features, query inputs and class probabilities for one image."""
    lr = np.asarray(lr, dtype=np.float64)
    h, w = lr.shape[:2]
    features = backbone_forward(model, lr)
    grid = core.make_query_grid((h * model.scale, w * model.scale), (h, w))
    inputs = core.gather_queries(features, grid)
    probs = softmax(classifier_logits(model, inputs)) if model.has_classifier else None
    return features, inputs, probs


def super_resolve(model, lr, scale=None, policy=None):
    """Full pipeline: features once, probabilities once, dispatch, compose, refine."""
    policy = policy or InferencePolicy.adm()
    if scale is not None and int(scale) != model.scale:
        raise ValueError(f"model is trained for x{model.scale}, requested x{scale}")
    lr = np.asarray(lr, dtype=np.float64)
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ValueError(f"expected h x w x 3 input, got {lr.shape}")
    if policy.mode != "fixed" and (not model.has_classifier
                                   or len(model.attached_upsamplers) != model.num_classes):
        raise StateError(f"policy {policy.describe()} needs a fully trained model "
                         f"(trained stage {model.trained_stage})")
    features, inputs, probs = predict_probs(model, lr)
    n = inputs.shape[0]
    if policy.mode == "fixed":
        _check_upsamplers(model, [policy.cls])
        labels = np.full(n, policy.cls, dtype=np.int64)
    elif policy.mode == "k":
        labels = dispatch_k(probs, compute_cost_vector(model), policy.k).labels
    else:
        labels = dispatch_adm(probs, model.num_classes)[0].labels
    return render(model, lr, labels, inputs=inputs, refine_output=policy.refine,
                  classifier_used=probs is not None, probs=probs)


def reference_sr(model, lr, j=0):
    """Single-upsampler pipeline: backbone + U_j on every pixel, no dispatch."""
    lr = np.asarray(lr, dtype=np.float64)
    h, w = lr.shape[:2]
    H, W = h * model.scale, w * model.scale
    features = backbone_forward(model, lr)
    grid = core.make_query_grid((H, W), (h, w))
    residual = upsampler_apply(model, j, core.gather_queries(features, grid))
    return compose_sr(lr, residual, (H, W))


def _tile_starts(n, tile, overlap):
    if tile >= n:
        return [0]
    step = tile - overlap
    starts = list(range(0, n - tile, step))
    starts.append(n - tile)
    return starts


def tile_process(model, lr, scale=None, policy=None, tile=64, overlap=8):
    """Super-resolve overlapping LR tiles and average the HR overlaps."""
    if tile <= overlap or overlap < 0:
        raise ValueError(f"need tile > overlap >= 0, got tile={tile}, overlap={overlap}")
    lr = np.asarray(lr, dtype=np.float64)
    h, w = lr.shape[:2]
    s = model.scale
    acc = np.zeros((h * s, w * s, 3))
    weight = np.zeros((h * s, w * s, 1))
    for y in _tile_starts(h, tile, overlap):
        for x in _tile_starts(w, tile, overlap):
            patch = lr[y:y + tile, x:x + tile]
            out = super_resolve(model, patch, scale, policy).sr
            ys, xs = y * s, x * s
            acc[ys:ys + out.shape[0], xs:xs + out.shape[1]] += out
            weight[ys:ys + out.shape[0], xs:xs + out.shape[1]] += 1.0
    return acc / weight
