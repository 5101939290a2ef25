"""Losses and the multi-stage training procedure.

Stage 0 fits the backbone and the heaviest upsampler on the reconstruction
loss. Stage j >= 1 freezes everything trained so far, attaches upsampler j (and
the classifier at j = 1) and fits ``{U_j, classifier}`` on the total loss of the
probability-blended forward pass.
"""
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import core
from .models import StateError, attach_classifier, attach_upsampler

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "recon", "avg", "total", "learning_rate")


class StageOrderError(StateError):
    """Requested stage does not follow the model's trained stage."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class TrainConfig:
    stage: int = 0
    iterations: int = 5000
    batch_size: int = 16
    lr_patch: tuple = (32, 32)
    scale: int = 2
    learning_rate: float = 1e-3
    min_learning_rate: float = 0.0
    lr_schedule: str = "cosine"
    # None -> 1 / (N * H * W), i.e. the balance term as a per-pixel fraction
    avg_loss_weight: float = None
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        self.lr_patch = tuple(int(v) for v in self.lr_patch)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if len(self.lr_patch) != 2 or min(self.lr_patch) < 1:
            raise ValueError(f"lr_patch must be two positive ints, got {self.lr_patch}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.avg_loss_weight is not None and self.avg_loss_weight < 0:
            raise ValueError("avg_loss_weight must be non-negative")


@dataclass(frozen=True)
class StageState:
    stage: int
    trainable: frozenset
    frozen: frozenset


def stage_state(stage, num_classes):
    if not 0 <= stage < num_classes:
        raise StageOrderError(f"stage {stage} out of range for M={num_classes}")
    if stage == 0:
        return StageState(0, frozenset({"backbone", "upsampler.0"}), frozenset())
    frozen = {"backbone"} | {f"upsampler.{j}" for j in range(stage)}
    return StageState(stage, frozenset({f"upsampler.{stage}", "classifier"}), frozenset(frozen))


def module_of(param_name):
    parts = param_name.split(".")
    return ".".join(parts[:2]) if parts[0] == "upsampler" else parts[0]


# -- losses (work on numpy arrays and torch tensors alike) --------------------

def recon_loss(pred, hr, up_lr):
    """Mean absolute error between ``pred`` and the residual target ``hr - up_lr``."""
    if hr.shape != up_lr.shape:
        raise ValueError(f"hr {tuple(hr.shape)} and upsampled lr {tuple(up_lr.shape)} differ")
    target = hr - up_lr
    if pred.shape != target.shape:
        if pred.shape[-1] != 3 or math.prod(pred.shape) != math.prod(target.shape):
            raise ValueError(f"prediction {tuple(pred.shape)} does not match target {tuple(target.shape)}")
        target = target.reshape(pred.shape)
    return abs(pred - target).mean()


def _scalar(x):
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def _check_probs(probs):
    if probs.shape[-1] < 1:
        raise ValueError("probabilities need at least one class")
    lo, hi = _scalar(probs.min()), _scalar(probs.max())
    row_err = _scalar(abs(probs.sum(axis=-1) - 1.0).max())
    if lo < 0.0 or hi > 1.0 or row_err > 1e-5:
        raise ValueError(f"rows are not on the probability simplex "
                         f"(min {lo}, max {hi}, row-sum error {row_err})")


def avg_loss(probs):
    """sum_j | sum_{n,i} p_{n,i,j} - N*HW/M | over the trailing class axis."""
    _check_probs(probs)
    m = probs.shape[-1]
    flat = probs.reshape(-1, m)
    mass = flat.sum(axis=0)
    return abs(mass - flat.shape[0] / m).sum()


def total_loss(recon, avg, avg_weight):
    if avg_weight < 0:
        raise ValueError("avg_weight must be non-negative")
    return recon + avg_weight * avg


# -- batches --------------------------------------------------------------------

def augment(patch, hflip=False, vflip=False, rot=0):
    """Flip then rotate by ``rot`` quarter turns (H x W x C patch)."""
    if hflip:
        patch = patch[:, ::-1]
    if vflip:
        patch = patch[::-1]
    return np.rot90(patch, rot, axes=(0, 1))


def sample_batch(dataset, config, rng):
    """Aligned random LR/HR crops with identical flips and rotations."""
    if not dataset.entries:
        raise ValueError("dataset is empty")
    hp, wp = config.lr_patch
    s = dataset.scale
    for e in dataset.entries:
        if hp > e.lr.shape[0] or wp > e.lr.shape[1]:
            raise ValueError(f"crop {hp}x{wp} larger than LR image {e.id} {e.lr.shape[:2]}")
    lrs, hrs = [], []
    for _ in range(config.batch_size):
        e = dataset.entries[rng.integers(len(dataset.entries))]
        y = int(rng.integers(e.lr.shape[0] - hp + 1))
        x = int(rng.integers(e.lr.shape[1] - wp + 1))
        hflip = bool(rng.integers(2))
        vflip = bool(rng.integers(2))
        rot = int(rng.integers(4)) if hp == wp else 2 * int(rng.integers(2))
        lrs.append(augment(e.lr[y:y + hp, x:x + wp], hflip, vflip, rot))
        hrs.append(augment(e.hr[y * s:(y + hp) * s, x * s:(x + wp) * s], hflip, vflip, rot))
    return np.stack(lrs).astype(np.float32), np.stack(hrs).astype(np.float32)


# -- torch graph ------------------------------------------------------------------

def torch_backbone(params, spec, x):
    """x: (N, 3, h, w) -> (N, D, h, w)."""
    for l, layer in enumerate(spec.layers):
        x = F.conv2d(x, params[f"backbone.{l}.weight"], params[f"backbone.{l}.bias"],
                     padding=layer.kernel // 2)
        if layer.activation == "relu":
            x = F.relu(x)
    return x


def torch_mlp(params, prefix, n_layers, x):
    for l in range(n_layers):
        x = x @ params[f"{prefix}.{l}.weight"] + params[f"{prefix}.{l}.bias"]
        if l < n_layers - 1:
            x = F.relu(x)
    return x


def patch_queries(lr_size, scale):
    """Nearest LR cell and relative coordinate for every HR pixel of a patch."""
    h, w = lr_size
    grid = core.make_query_grid((h * scale, w * scale), (h, w))
    rows, cols, rel = core.nearest_cells(grid.lr_coords_norm, (h, w))
    return torch.from_numpy(rows), torch.from_numpy(cols), torch.from_numpy(rel)


def stage_forward(model, params, lr, stage, queries=None):
    """Training forward for ``stage``.

    lr: (N, h, w, 3) tensor. Returns the residual prediction (N, HW, 3) and the
    class probabilities (N, HW, stage + 1), or ``None`` for stage 0. Only the
    upsamplers attached so far take part in the blend.
    """
    n, h, w, _ = lr.shape
    rows, cols, rel = queries if queries is not None else patch_queries((h, w), model.scale)
    z = torch_backbone(params, model.backbone, lr.permute(0, 3, 1, 2))
    feat = z[:, :, rows, cols].permute(0, 2, 1)
    rel = rel.to(feat.dtype).unsqueeze(0).expand(n, -1, -1)
    inputs = torch.cat([feat, rel], dim=-1)

    def upsample(j):
        return torch_mlp(params, f"upsampler.{j}", len(model.upsampler_specs[j].layer_dims), inputs)

    if stage == 0:
        return upsample(0), None
    logits = torch_mlp(params, "classifier", len(model.classifier_spec.layer_dims), inputs)
    probs = torch.softmax(logits[..., : stage + 1], dim=-1)
    pred = sum(probs[..., j:j + 1] * upsample(j) for j in range(stage + 1))
    return pred, probs


def stage_losses(model, params, lr, hr, up_lr, stage, avg_weight=None, queries=None):
    """(recon, avg, total) tensors for one batch; avg is 0 at stage 0."""
    pred, probs = stage_forward(model, params, lr, stage, queries)
    n = hr.shape[0]
    recon = recon_loss(pred, hr.reshape(n, -1, 3), up_lr.reshape(n, -1, 3))
    if probs is None:
        return recon, torch.zeros((), dtype=recon.dtype), recon
    avg = avg_loss(probs)
    weight = 1.0 / (probs.shape[0] * probs.shape[1]) if avg_weight is None else avg_weight
    return recon, avg, total_loss(recon, avg, weight)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)


def _rngs(seed):
    init_seq, batch_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(batch_seq)


def prepare_stage(model, stage, seed=0):
    """Copy ``model`` and attach the modules that ``stage`` introduces."""
    if stage != model.trained_stage + 1:
        raise StageOrderError(f"cannot train stage {stage}: model is at stage {model.trained_stage}")
    state = stage_state(stage, model.num_classes)
    model = model.copy()
    init_rng, _ = _rngs(seed)
    if stage >= 1:
        attach_upsampler(model, stage, init_rng)
        if stage == 1:
            attach_classifier(model, init_rng)
    return model, state


def train_stage(model, config, dataset, progress=None):
    """Train one stage; returns a new model plus the loss history."""
    if config.scale != model.scale or dataset.scale != model.scale:
        raise ValueError(f"scale mismatch: model x{model.scale}, config x{config.scale}, "
                         f"dataset x{dataset.scale}")
    model, state = prepare_stage(model, config.stage, config.seed)
    _, batch_rng = _rngs(config.seed)
    torch.manual_seed(config.seed)

    params = {}
    trainable = []
    for name, value in model.params.items():
        t = torch.from_numpy(value.copy())
        if module_of(name) in state.trainable:
            t.requires_grad_(True)
            trainable.append(t)
        params[name] = t
    opt = torch.optim.Adam(trainable, lr=config.learning_rate)
    sched = None
    if config.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(
            opt, T_max=config.iterations, eta_min=config.min_learning_rate)
    queries = patch_queries(config.lr_patch, model.scale)
    hr_size = (config.lr_patch[0] * model.scale, config.lr_patch[1] * model.scale)

    history = []
    for it in range(1, config.iterations + 1):
        lr_np, hr_np = sample_batch(dataset, config, batch_rng)
        up_np = core.bilinear_upsample(lr_np, hr_size).astype(np.float32)
        lr_t, hr_t, up_t = (torch.from_numpy(np.ascontiguousarray(a)) for a in (lr_np, hr_np, up_np))
        recon, avg, total = stage_losses(model, params, lr_t, hr_t, up_t, config.stage,
                                         config.avg_loss_weight, queries)
        if not torch.isfinite(total):
            raise TrainingError(f"non-finite loss at iteration {it} of stage {config.stage}: "
                                f"recon={_scalar(recon)}, avg={_scalar(avg)}")
        current_lr = opt.param_groups[0]["lr"]
        opt.zero_grad()
        total.backward()
        opt.step()
        if sched is not None:
            sched.step()
        if it == 1 or it % config.log_every == 0 or it == config.iterations:
            row = {"iteration": it, "recon": _scalar(recon), "avg": _scalar(avg),
                   "total": _scalar(total), "learning_rate": current_lr}
            history.append(row)
            if progress is not None:
                progress(row)
            logger.debug("stage %d iter %d total %.5f", config.stage, it, row["total"])

    for name, t in params.items():
        if t.requires_grad:
            model.params[name] = t.detach().numpy().astype(np.float32).copy()
    model.trained_stage = config.stage
    return TrainResult(model, history)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def smoothed(values, window=10):
    """Trailing moving average (shorter window at the start)."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    for i in range(values.size):
        out[i] = values[max(0, i - window + 1): i + 1].mean()
    return out


# -- gradient checking --------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    samples: list


def gradient_check(loss_fn, params, num_samples=10, eps=1e-5, seed=0, names=None, floor=1e-6):
    """Compare autograd gradients against central finite differences.

    ``params`` maps names to float64 leaf tensors with ``requires_grad``;
    ``loss_fn()`` recomputes the scalar loss from their current values.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    names = list(names or params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    grads = {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}
    sizes = np.array([params[n].numel() for n in names])
    rng = np.random.default_rng(seed)
    flat_choices = rng.choice(sizes.sum(), size=min(num_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    samples = []
    worst = 0.0
    for flat in flat_choices:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        p = params[name]
        with torch.no_grad():
            view = p.view(-1)
            orig = view[idx].item()
            view[idx] = orig + eps
            f_plus = float(loss_fn())
            view[idx] = orig - eps
            f_minus = float(loss_fn())
            view[idx] = orig
        numeric = (f_plus - f_minus) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
        samples.append((name, idx, analytic, numeric, rel))
    return GradCheckResult(worst, samples)


def pcsr_loss_closure(model, lr, hr, stage=None, avg_weight=None):
    """Float64 parameter tensors and a total-loss closure for gradient checks.

    Every parameter requires grad, so the check covers the whole blended
    forward rather than only the modules a stage would update.
    """
    stage = model.num_classes - 1 if stage is None else stage
    params = {n: torch.tensor(v, dtype=torch.float64, requires_grad=True) for n, v in model.params.items()}
    lr_t = torch.tensor(np.asarray(lr), dtype=torch.float64)
    hr_t = torch.tensor(np.asarray(hr), dtype=torch.float64)
    up = core.bilinear_upsample(np.asarray(lr, dtype=np.float64), hr.shape[-3:-1])
    up_t = torch.tensor(up, dtype=torch.float64)
    queries = patch_queries(lr.shape[-3:-1], model.scale)

    def fn():
        return stage_losses(model, params, lr_t, hr_t, up_t, stage, avg_weight, queries)[2]

    return params, fn
