"""PSNR, per-policy evaluation, k sweeps and assignment baselines."""
import csv
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import core
from .inference import InferencePolicy, compute_cost_vector, predict_probs, render, super_resolve
from .models import StateError, upsampler_apply

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepRecord:
    policy: str
    k: float
    psnr_db: float
    total_flops: int
    fractions: tuple


def psnr(a, b):
    """PSNR in dB over all RGB values of two [0, 1] images; inf when equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(-10.0 * np.log10(mse))


def mean_psnr(values):
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    if finite.size < values.size:
        warnings.warn(f"{values.size - finite.size} image(s) reproduced exactly; "
                      "excluded from the mean PSNR", RuntimeWarning, stacklevel=2)
    if finite.size == 0:
        return math.inf
    return float(finite.mean())


def _require_trained(model):
    if model.trained_stage < 0:
        raise StateError("model is untrained")


def _record(name, k, psnrs, flops, histogram):
    hist = np.asarray(histogram, dtype=np.float64)
    fractions = tuple(float(f) for f in hist / hist.sum())
    return SweepRecord(name, k, mean_psnr(psnrs), int(flops), fractions)


def evaluate(model, dataset, policy):
    """Mean PSNR and summed FLOPs of ``policy`` over every dataset entry."""
    _require_trained(model)
    psnrs, flops = [], 0
    histogram = np.zeros(model.num_classes, dtype=np.int64)
    for entry in dataset.entries:
        result = super_resolve(model, entry.lr, dataset.scale, policy)
        psnrs.append(psnr(result.sr, entry.hr))
        flops += result.flops.total
        histogram += result.assignment.histogram
    k = policy.k if policy.mode == "k" else None
    return _record(policy.describe(), k, psnrs, flops, histogram)


def sweep_k(model, dataset, k_values, refine=True):
    k_values = [float(k) for k in k_values]
    if not k_values:
        raise ValueError("k_values is empty")
    if any(b < a for a, b in zip(k_values, k_values[1:])):
        raise ValueError("k_values must be sorted ascending")
    return [evaluate(model, dataset, InferencePolicy.k_dispatch(k, refine)) for k in k_values]


def evaluate_assignments(model, dataset, name, assign, refine=True):
    """Evaluate externally chosen labels; ``assign(entry, probs, inputs)`` -> labels."""
    _require_trained(model)
    psnrs, flops = [], 0
    histogram = np.zeros(model.num_classes, dtype=np.int64)
    for entry in dataset.entries:
        _, inputs, probs = predict_probs(model, entry.lr)
        labels = assign(entry, probs, inputs)
        result = render(model, entry.lr, labels, inputs=inputs, refine_output=refine,
                        classifier_used=False)
        psnrs.append(psnr(result.sr, entry.hr))
        flops += result.flops.total
        histogram += result.assignment.histogram
    return _record(name, None, psnrs, flops, histogram)


def oracle_assignment(model, lr, hr, inputs=None):
    """Per HR pixel, the upsampler with the smallest L1 residual error."""
    _require_trained(model)
    lr = np.asarray(lr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    H, W = hr.shape[:2]
    if (H, W) != (lr.shape[0] * model.scale, lr.shape[1] * model.scale):
        raise ValueError(f"HR {hr.shape} does not match LR {lr.shape} at x{model.scale}")
    if model.num_classes == 1:
        return np.zeros(H * W, dtype=np.int64)
    if inputs is None:
        inputs = predict_probs(model, lr)[1]
    target = (hr - core.bilinear_upsample(lr, (H, W))).reshape(-1, 3)
    errors = np.stack([np.abs(upsampler_apply(model, j, inputs) - target).sum(axis=1)
                       for j in range(model.num_classes)], axis=1)
    return errors.argmin(axis=1).astype(np.int64)


def random_assignment(n, num_classes, rng):
    return rng.integers(num_classes, size=n).astype(np.int64)


def baseline_records(model, dataset, seed=0, refine=True):
    """All-heavy, all-light, seeded random and oracle records."""
    m = model.num_classes
    records = [evaluate(model, dataset, InferencePolicy.fixed_class(0, refine)),
               evaluate(model, dataset, InferencePolicy.fixed_class(m - 1, refine))]
    rng = np.random.default_rng(seed)
    records.append(evaluate_assignments(
        model, dataset, "random", lambda e, p, x: random_assignment(x.shape[0], m, rng), refine))
    records.append(evaluate_assignments(
        model, dataset, "oracle", lambda e, p, x: oracle_assignment(model, e.lr, e.hr, x), refine))
    return records


def bilinear_psnr(dataset):
    return mean_psnr([psnr(core.bilinear_upsample(e.lr, e.hr.shape[:2]), e.hr)
                      for e in dataset.entries])


def switch_k(probs, costs):
    """Per pixel, the k above which it leaves the heaviest upsampler.

    Pixel i stays on U_0 exactly while k < min_j (p_i0 - p_ij) / (c_0 - c_j).
    """
    probs = np.asarray(probs, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    gaps = (probs[:, :1] - probs[:, 1:]) / (costs[0] - costs[1:])[None, :]
    return gaps.min(axis=1)


def quantile_k_values(model, dataset, quantiles=(0.2, 0.5, 0.8)):
    """k values that send roughly ``1 - q`` of pixels to U_0 on ``dataset``."""
    costs = compute_cost_vector(model).costs
    ks = np.concatenate([switch_k(predict_probs(model, e.lr)[2], costs) for e in dataset.entries])
    return [float(v) for v in np.quantile(ks, quantiles)]


CSV_BASE_COLUMNS = ("policy", "k", "psnr_db", "total_flops")


def csv_columns(num_classes):
    return list(CSV_BASE_COLUMNS) + [f"frac_class_{j}" for j in range(num_classes)]


def write_records_csv(records, path, num_classes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_columns(num_classes))
        for r in records:
            writer.writerow([r.policy, "" if r.k is None else repr(r.k), repr(r.psnr_db),
                             r.total_flops, *[repr(f) for f in r.fractions]])


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        fracs = tuple(float(row[c]) for c in row if c.startswith("frac_class_"))
        records.append(SweepRecord(row["policy"], float(row["k"]) if row["k"] else None,
                                   float(row["psnr_db"]), int(row["total_flops"]), fracs))
    return records
