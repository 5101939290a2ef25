"""Image I/O, LR/HR pair construction, the patch cache and a synthetic corpus."""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import bicubic_downsample

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png",)
CACHE_VERSION = 1


@dataclass
class Entry:
    id: str
    hr_path: str
    hr: np.ndarray
    lr: np.ndarray


@dataclass
class Dataset:
    entries: list = field(default_factory=list)
    scale: int = 2
    split: str = "train"

    def __len__(self):
        return len(self.entries)


def load_image(path):
    """Decode a PNG into an H x W x 3 float32 array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            rgb = im.convert("RGB")
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return np.asarray(rgb, dtype=np.uint8).astype(np.float32) / np.float32(255.0)


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def save_label_map(path, labels, num_classes):
    """Class indices as grayscale PNG, scaled so class M-1 is white."""
    labels = np.asarray(labels, dtype=np.int64)
    denom = max(num_classes - 1, 1)
    gray = np.round(labels * (255.0 / denom)).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def center_crop_to_multiple(img, scale):
    h, w = img.shape[:2]
    H, W = h - h % scale, w - w % scale
    if H == 0 or W == 0:
        raise ValueError(f"image {h}x{w} smaller than scale {scale}")
    top, left = (h - H) // 2, (w - W) // 2
    return img[top:top + H, left:left + W]


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_blob(path, arr):
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_blob(path, shape):
    arr = np.fromfile(path, dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise OSError(f"cache blob {path} has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape).astype(np.float32)


def _load_cache_index(cache_dir):
    index_path = Path(cache_dir) / "index.json"
    if not index_path.exists():
        return {"version": CACHE_VERSION, "entries": {}}
    index = json.loads(index_path.read_text())
    if index.get("version") != CACHE_VERSION:
        return {"version": CACHE_VERSION, "entries": {}}
    return index


def build_dataset(directory, scale, split="train", cache_dir=None):
    """Pairs (HR cropped to a multiple of ``scale``, bicubic LR) in name order.

    With ``cache_dir`` the arrays are stored as little-endian float32 blobs
    indexed by ``index.json`` and reused while the source file hash matches.
    """
    scale = int(scale)
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    paths = list_images(directory)
    if not paths:
        raise ValueError(f"no PNG images in {directory}")
    index = None
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        index = _load_cache_index(cache_dir)
    entries = []
    dirty = False
    for path in paths:
        entry_id = path.stem
        key = f"{entry_id}@x{scale}"
        digest = _sha256(path) if index is not None else None
        cached = index["entries"].get(key) if index is not None else None
        if cached is not None and cached["source_sha256"] == digest:
            hr = _read_blob(Path(cache_dir) / cached["hr"], cached["hr_shape"])
            lr = _read_blob(Path(cache_dir) / cached["lr"], cached["lr_shape"])
        else:
            hr = center_crop_to_multiple(load_image(path), scale)
            lr = bicubic_downsample(hr, scale).astype(np.float32)
            if index is not None:
                hr_name, lr_name = f"{key}.hr.f32", f"{key}.lr.f32"
                _write_blob(Path(cache_dir) / hr_name, hr)
                _write_blob(Path(cache_dir) / lr_name, lr)
                index["entries"][key] = {
                    "source": path.name, "source_sha256": digest,
                    "hr": hr_name, "hr_shape": list(hr.shape),
                    "lr": lr_name, "lr_shape": list(lr.shape),
                }
                dirty = True
        entries.append(Entry(entry_id, str(path), hr, lr))
    if dirty:
        (Path(cache_dir) / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return Dataset(entries, scale, split)


# -- synthetic corpus --------------------------------------------------------------

def _smooth_background(rng, yy, xx):
    img = np.empty(yy.shape + (3,))
    for c in range(3):
        a, b, d = rng.uniform(-0.4, 0.4, size=3)
        img[..., c] = 0.5 + a * yy + b * xx + d * yy * xx
    return img


def synth_texture(rng, size=96):
    """A procedural image mixing flat areas with edges and fine detail."""
    h = w = size
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    img = _smooth_background(rng, yy, xx)
    n_shapes = int(rng.integers(3, 7))
    for _ in range(n_shapes):
        kind = rng.integers(5)
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(-0.8, 0.8, size=2)
        r = rng.uniform(0.15, 0.45)
        if kind == 0:  # disc
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
            img[mask] = color
        elif kind == 1:  # stripes inside a box
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(8, 30)
            box = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)
            wave = 0.5 + 0.5 * np.sign(np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy)))
            img[box] = (wave[box, None] * color + (1 - wave[box, None]) * (1 - color))
        elif kind == 2:  # checkerboard patch
            cell = rng.uniform(0.04, 0.12)
            box = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)
            check = ((np.floor(yy / cell) + np.floor(xx / cell)) % 2).astype(bool)
            img[box & check] = color
            img[box & ~check] = 1 - color
        elif kind == 3:  # thin lines
            for _ in range(int(rng.integers(2, 6))):
                theta = rng.uniform(0, np.pi)
                off = rng.uniform(-0.8, 0.8)
                dist = np.abs(np.cos(theta) * xx + np.sin(theta) * yy - off)
                img[dist < rng.uniform(0.01, 0.03)] = color
        else:  # sharp-edged triangle
            pts = np.stack([cy, cx]) + rng.uniform(-r, r, size=(3, 2))
            inside = np.ones_like(yy, dtype=bool)
            sign = None
            for a, b in zip(pts, np.roll(pts, -1, axis=0)):
                cross = (b[1] - a[1]) * (yy - a[0]) - (b[0] - a[0]) * (xx - a[1])
                sign = np.sign(cross) if sign is None else sign
                inside &= np.sign(cross) == sign
            img[inside] = color
    return np.clip(img, 0.0, 1.0)


def write_synthetic_corpus(directory, count=8, size=96, seed=0, prefix="img"):
    """Write ``count`` procedural PNGs; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        path = directory / f"{prefix}{i:03d}.png"
        save_image(path, synth_texture(rng, size))
        paths.append(path)
    return paths
