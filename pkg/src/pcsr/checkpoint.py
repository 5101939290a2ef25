"""Language-neutral checkpoints: a JSON manifest next to one raw tensor blob.

The blob is the concatenation of every tensor as little-endian float32 in
row-major order; the manifest records name, shape, dtype, offset, byte length
and sha256 per tensor plus a digest of the whole blob.
"""
import hashlib
import json
from pathlib import Path

import numpy as np

from .models import PCSRModel

FORMAT = "pcsr-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def payload_path(manifest_path):
    return Path(manifest_path).with_suffix(".bin")


def save_checkpoint(model, path):
    """Write ``path`` (manifest) and its ``.bin`` payload; returns both paths."""
    path = Path(path)
    blob_path = payload_path(path)
    tensors, chunks, offset = [], [], 0
    for name, value in model.params.items():
        raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
        tensors.append({
            "name": name, "shape": list(value.shape), "dtype": "float32",
            "offset": offset, "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest(),
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT, "version": VERSION,
        "model": model.spec_dict(), "trained_stage": model.trained_stage,
        "payload": blob_path.name, "payload_nbytes": len(blob),
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": tensors,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(blob)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path, blob_path


def load_checkpoint(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(f"{path} is not a {FORMAT} v{VERSION} manifest")
    blob_path = path.parent / manifest["payload"]
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"missing checkpoint payload {blob_path}") from exc
    if len(blob) != manifest["payload_nbytes"]:
        raise CheckpointError(f"payload {blob_path} has {len(blob)} bytes, "
                              f"manifest says {manifest['payload_nbytes']}")
    if hashlib.sha256(blob).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"payload checksum mismatch for {blob_path}")
    model = PCSRModel.from_spec_dict(manifest["model"])
    model.trained_stage = int(manifest["trained_stage"])
    for t in manifest["tensors"]:
        if t["dtype"] != "float32":
            raise CheckpointError(f"unsupported dtype {t['dtype']} for {t['name']}")
        raw = blob[t["offset"]: t["offset"] + t["nbytes"]]
        if len(raw) != t["nbytes"] or t["nbytes"] != 4 * int(np.prod(t["shape"], dtype=np.int64)):
            raise CheckpointError(f"tensor {t['name']} has inconsistent size")
        if hashlib.sha256(raw).hexdigest() != t["sha256"]:
            raise CheckpointError(f"checksum mismatch for tensor {t['name']}")
        model.params[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(t["shape"]).astype(np.float32)
    return model
