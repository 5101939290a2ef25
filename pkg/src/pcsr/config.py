"""Run configuration: one JSON file validated against a closed schema."""
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .training import TrainConfig

_POS_INT = {"type": "integer", "minimum": 1}
_HIDDEN = {"type": "array", "items": _POS_INT}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["data", "output_dir"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scale": _POS_INT,
                "feature_dim": _POS_INT,
                "backbone_channels": _HIDDEN,
                "kernel": {"type": "integer", "minimum": 1},
                "upsampler_hidden": {"type": "array", "items": _HIDDEN, "minItems": 2},
                "classifier_hidden": _HIDDEN,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": {"oneOf": [_POS_INT, {"type": "array", "items": _POS_INT, "minItems": 1}]},
                "batch_size": _POS_INT,
                "lr_patch": {"oneOf": [_POS_INT, {"type": "array", "items": _POS_INT,
                                                  "minItems": 2, "maxItems": 2}]},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "min_learning_rate": {"type": "number", "minimum": 0},
                "lr_schedule": {"enum": ["cosine", "constant"]},
                "avg_loss_weight": {"type": ["number", "null"], "minimum": 0},
                "log_every": _POS_INT,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train_dir"],
            "properties": {
                "train_dir": {"type": "string"},
                "val_dir": {"type": "string"},
                "cache_dir": {"type": "string"},
            },
        },
        "inference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy": {"type": "string"},
                "refine": {"type": "boolean"},
                "k_values": {"type": "array", "items": {"type": "number"}},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

MODEL_DEFAULTS = {
    "scale": 2, "feature_dim": 16, "backbone_channels": [16, 16, 16], "kernel": 3,
    "upsampler_hidden": [[64, 64], [16]], "classifier_hidden": [16],
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def model(self):
        return {**MODEL_DEFAULTS, **self.raw.get("model", {})}

    def path(self, key):
        value = self.raw["data"].get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self):
        p = Path(self.raw["output_dir"])
        return p if p.is_absolute() else self.base_dir / p

    def seed(self, override=None):
        """Flag, then config, then ``PCSR_SEED``, then 0."""
        if override is not None:
            return int(override)
        if "seed" in self.raw:
            return int(self.raw["seed"])
        return int(os.environ.get("PCSR_SEED", 0))

    def train_config(self, stage, seed, iterations=None):
        t = self.raw.get("train", {})
        its = iterations if iterations is not None else t.get("iterations", 5000)
        if isinstance(its, list):
            its = its[min(stage, len(its) - 1)]
        patch = t.get("lr_patch", 32)
        if isinstance(patch, int):
            patch = (patch, patch)
        return TrainConfig(
            stage=stage, iterations=int(its), batch_size=t.get("batch_size", 16),
            lr_patch=tuple(patch), scale=self.model["scale"],
            learning_rate=t.get("learning_rate", 1e-3),
            min_learning_rate=t.get("min_learning_rate", 0.0),
            lr_schedule=t.get("lr_schedule", "cosine"),
            avg_loss_weight=t.get("avg_loss_weight"), seed=seed,
            log_every=t.get("log_every", 50),
        )


def validate(raw):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    model = {**MODEL_DEFAULTS, **raw.get("model", {})}
    if model["kernel"] % 2 == 0:
        raise ConfigError("model.kernel must be odd")


def load_config(path):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate(raw)
    return RunConfig(raw, path.parent)
