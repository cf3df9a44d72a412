"""File formats: model checkpoints (FTTX), perturbations (FTUP), images and dataset directories.

Both binary formats are little-endian and start with four magic bytes and a
``u32`` version number.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .attack import Perturbation
from .texclass.data import LabeledSet
from .texclass.model import CONV1_OUT, CONV2_OUT, PARAM_NAMES, TexModel
from .transform import NUM_BANDS, center_crop8

MODEL_MAGIC = b"FTTX"
PERT_MAGIC = b"FTUP"
FORMAT_VERSION = 1
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png")
SPLITS = ("train", "attack", "test")


class FormatError(ValueError):
    """A file exists but its contents are not in the expected format."""


def _read_exact(f, n: int, path) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"{path}: truncated file")
    return b


def _check_header(f, magic: bytes, path) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic bytes {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, path))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")


# -- model checkpoints ----------------------------------------------------------


def save_model(m: TexModel, path) -> None:
    """Write magic, version, (channels, classes, conv1 width, conv2 width) and f64 parameters."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<4I", m.channels, m.num_classes, CONV1_OUT, CONV2_OUT))
        for name in PARAM_NAMES:
            f.write(np.ascontiguousarray(m.params[name], dtype="<f8").tobytes())


def load_model(path) -> TexModel:
    with open(path, "rb") as f:
        _check_header(f, MODEL_MAGIC, path)
        channels, classes, c1, c2 = struct.unpack("<4I", _read_exact(f, 16, path))
        if (c1, c2) != (CONV1_OUT, CONV2_OUT) or channels not in (1, 3) or classes < 2:
            raise FormatError(f"{path}: unsupported architecture {(channels, classes, c1, c2)}")
        m = TexModel(channels, classes, seed=None)
        for name in PARAM_NAMES:
            shape = m.params[name].shape
            n = int(np.prod(shape))
            m.params[name] = np.frombuffer(_read_exact(f, 8 * n, path), dtype="<f8").reshape(shape).astype(np.float64)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after parameters")
    return m


# -- perturbations ----------------------------------------------------------------


def save_perturbation(p: Perturbation, path) -> None:
    c, h, w = p.spatial.shape
    with open(path, "wb") as f:
        f.write(PERT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<B", 0 if p.domain == "spatial" else 1))
        f.write(struct.pack("<3I", c, h, w))
        if p.domain == "spatial":
            f.write(struct.pack("<d", p.eps))
            f.write(np.ascontiguousarray(p.spatial, dtype="<f8").tobytes())
        else:
            f.write(np.ascontiguousarray(p.thresholds, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(p.bands, dtype="<f8").tobytes())


def load_perturbation(path) -> Perturbation:
    with open(path, "rb") as f:
        _check_header(f, PERT_MAGIC, path)
        (tag,) = struct.unpack("<B", _read_exact(f, 1, path))
        c, h, w = struct.unpack("<3I", _read_exact(f, 12, path))
        if tag not in (0, 1) or h % 8 or w % 8:
            raise FormatError(f"{path}: bad domain tag {tag} or dimensions {(c, h, w)}")
        if tag == 0:
            (eps,) = struct.unpack("<d", _read_exact(f, 8, path))
            data = np.frombuffer(_read_exact(f, 8 * c * h * w, path), dtype="<f8")
            p = Perturbation("spatial", data.reshape(c, h, w).astype(np.float64), eps=eps)
        else:
            t = np.frombuffer(_read_exact(f, 8 * NUM_BANDS, path), dtype="<f8").reshape(8, 8).astype(np.float64)
            n = c * NUM_BANDS * (h // 8) * (w // 8)
            bands = np.frombuffer(_read_exact(f, 8 * n, path), dtype="<f8")
            p = Perturbation.from_bands(bands.reshape(c, NUM_BANDS, h // 8, w // 8), t)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return p


# -- images ---------------------------------------------------------------------------


def read_image(path, channels: int | None = None) -> np.ndarray:
    """Read a PPM/PGM/PNG file into a float (C, H, W) array, center-cropped to multiples of 8."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if channels == 1 or (channels is None and mode in ("L", "I", "I;16", "1")):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            a = np.asarray(im, dtype=np.float64)
    except OSError as e:
        raise FormatError(f"{path}: cannot read image ({e})") from None
    a = a[None] if a.ndim == 2 else a.transpose(2, 0, 1)
    return center_crop8(a)


def write_image(img: np.ndarray, path) -> None:
    """Write a (C, H, W) image, rounded to 8 bits. The format follows the suffix (.ppm/.pgm/.png)."""
    a = np.clip(np.round(np.asarray(img)), 0, 255).astype(np.uint8)
    im = Image.fromarray(a[0] if a.shape[0] == 1 else a.transpose(1, 2, 0))
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    im.save(path, format=fmt)


def write_dataset(data: LabeledSet, root, suffix: str = ".ppm") -> None:
    """One subdirectory per class, files named ``<index>.ppm``."""
    root = Path(root)
    for k, name in enumerate(data.class_names):
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, lab) in enumerate(zip(data.images, data.labels)):
        write_image(img, root / data.class_names[lab] / f"{i:05d}{suffix}")


def read_dataset(root, channels: int | None = None) -> LabeledSet:
    """Read a class-per-subdirectory image folder; classes are ordered by directory name."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: dataset directory not found")
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not classes:
        raise FormatError(f"{root}: no class subdirectories")
    images, labels = [], []
    for k, name in enumerate(classes):
        for f in sorted((root / name).iterdir()):
            if f.suffix.lower() in IMAGE_SUFFIXES:
                images.append(read_image(f, channels))
                labels.append(k)
    if not images:
        raise FormatError(f"{root}: no images found")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise FormatError(f"{root}: images have differing shapes {sorted(shapes)}")
    return LabeledSet(np.stack(images), np.array(labels), classes)


def dataset_split(root, split: str, channels: int | None = None) -> LabeledSet:
    """Read ``root/<split>`` when the synthetic split layout is present, else ``root`` itself."""
    root = Path(root)
    if (root / split).is_dir():
        return read_dataset(root / split, channels)
    if any((root / s).is_dir() for s in SPLITS):
        raise FileNotFoundError(f"{root}: split directory {split!r} missing")
    return read_dataset(root, channels)
