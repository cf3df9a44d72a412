"""Labelled image sets, procedural texture synthesis, splitting and augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FAMILIES = ("grating", "checker", "lowpass")


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 255]
    labels: np.ndarray  # (N,) int64
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.class_names and len(self.labels):
            if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
                raise ValueError(f"labels must lie in [0, {len(self.class_names)})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(self.images[idx], self.labels[idx], list(self.class_names))


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic texture set.

    Pixels are ``background + contrast * gain * pattern + noise`` with a
    zero-mean pattern of RMS about 0.7. ``noise_level`` is the standard
    deviation of the additive Gaussian noise in code values.
    """

    num_classes: int = 4
    images_per_class: int = 100
    image_size: int = 64
    noise_level: float = 10.0
    seed: int = 0
    channels: int = 3
    contrast: float = 21.0
    background: float = 64.0

    def __post_init__(self):
        if self.image_size <= 0 or self.image_size % 8:
            raise ValueError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if self.num_classes < 1 or self.images_per_class < 1:
            raise ValueError("need at least one class and one image per class")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 0 <= self.contrast <= 127:
            raise ValueError("contrast must lie in [0, 127]")
        if not 0 <= self.background <= 255:
            raise ValueError("background must lie in [0, 255]")


def class_recipe(label: int) -> tuple[str, dict]:
    """Texture family and its class-specific parameters for class ``label``."""
    family = FAMILIES[label % 3]
    variant = label // 3
    if family == "grating":
        periods = (8.0, 5.0, 12.0, 3.5)
        angles = (30.0, 120.0, 75.0, 165.0)
        return family, {"period": periods[variant % 4] * (1 + variant // 4), "angle": angles[variant % 4]}
    if family == "checker":
        return family, {"cell": (1, 6, 3, 10)[variant % 4] + 4 * (variant // 4)}
    return family, {"cutoff": (0.06, 0.15, 0.03, 0.25)[variant % 4] / (1 + variant // 4)}


def class_name(label: int) -> str:
    family, params = class_recipe(label)
    tag = "_".join(f"{k}{v:g}" for k, v in params.items())
    return f"{label:02d}_{family}_{tag}"


def _pattern(family: str, params: dict, size: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean pattern with RMS about 0.7 (that of a unit sine)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if family == "grating":
        a = np.deg2rad(params["angle"])
        phase = rng.uniform(0, 2 * np.pi)
        u = xx * np.cos(a) + yy * np.sin(a)
        return np.sin(2 * np.pi * u / params["period"] + phase)
    if family == "checker":
        cell = params["cell"]
        ox, oy = rng.integers(0, 2 * cell, size=2)
        return np.where(((xx + ox) // cell + (yy + oy) // cell) % 2 == 0, 1.0, -1.0)
    white = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    gain = np.exp(-(fx**2 + fy**2) / (2 * params["cutoff"] ** 2))
    field_ = np.real(np.fft.ifft2(np.fft.fft2(white) * gain))
    field_ -= field_.mean()
    return np.clip(field_ * (np.sqrt(0.5) / (field_.std() + 1e-12)), -1.5, 1.5)


def synth_dataset(spec: SynthSpec) -> LabeledSet:
    """Procedural texture set, deterministic in ``spec.seed``; integer-valued pixels in [0, 255]."""
    rng = np.random.default_rng(spec.seed)
    n = spec.num_classes * spec.images_per_class
    images = np.empty((n, spec.channels, spec.image_size, spec.image_size))
    labels = np.repeat(np.arange(spec.num_classes), spec.images_per_class)
    for i, lab in enumerate(labels):
        family, params = class_recipe(int(lab))
        pat = _pattern(family, params, spec.image_size, rng)
        # channel gains vary per image so colour carries no class information
        gains = rng.uniform(0.8, 1.2, size=spec.channels)
        img = spec.background + spec.contrast * gains[:, None, None] * pat[None]
        if spec.noise_level > 0:
            img = img + rng.normal(0.0, spec.noise_level, size=img.shape)
        images[i] = np.clip(np.round(img), 0, 255)
    return LabeledSet(images, labels, [class_name(k) for k in range(spec.num_classes)])


def split_dataset(
    data: LabeledSet, fractions=(0.70, 0.15, 0.15), seed: int = 0
) -> tuple[LabeledSet, ...]:
    """Stratified split into len(fractions) parts (default train/attack/test)."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("split fractions must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for lab in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == lab)
        idx = idx[rng.permutation(len(idx))]
        bounds = np.round(np.cumsum(fractions) * len(idx)).astype(int)
        start = 0
        for p, stop in zip(parts, bounds):
            p.extend(idx[start:stop].tolist())
            start = stop
    return tuple(data.subset(sorted(p)) for p in parts)


def subsample(data: LabeledSet, fraction: float, seed: int) -> LabeledSet:
    """Random subset of ``round(fraction * n)`` samples (may be empty)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(round(fraction * len(data)))
    if k >= len(data):
        return data.subset(np.arange(len(data)))
    idx = np.sort(np.random.default_rng(seed).permutation(len(data))[:k])
    return data.subset(idx)


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random flip plus random crop from a reflect-padded copy, same output size.

    The flip mirrors both axes (a half turn). A single-axis mirror would change
    the orientation of a grating and with it the class.
    """
    out = np.empty_like(images)
    _, _, h, w = images.shape
    for i, img in enumerate(images):
        if rng.random() < 0.5:
            img = img[:, ::-1, ::-1]
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        dy, dx = rng.integers(0, 2 * pad + 1, size=2)
        out[i] = padded[:, dy : dy + h, dx : dx + w]
    return out
