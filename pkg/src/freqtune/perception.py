"""Luminance-model JND thresholds for 8x8 DCT bands and the frequency gain schedule.

The contrast sensitivity model is the Ahumada-Peterson parametric form; the
per-band l-infinity bound is::

    t(k1, k2) = M * T(k1, k2) / (2 c~(k1) c~(k2) (L_max - L_min))

and the attack bound is ``t_hat = lambda * t`` where ``lambda`` blends a
low-frequency gain and a high-frequency gain with a sigmoid centred on a cut-off
frequency.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .transform import N


@dataclass(frozen=True)
class DisplayModel:
    """Display and viewing geometry. Defaults: 0-175 cd/m^2, 8-bit, 60 cm at 31.5 px/cm."""

    l_min: float = 0.0
    l_max: float = 175.0
    m: float = 255.0
    w_x: float = 0.0303
    w_y: float = 0.0303

    def __post_init__(self):
        vals = (self.l_min, self.l_max, self.m, self.w_x, self.w_y)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("display parameters must be finite")
        if not self.l_max > self.l_min >= 0:
            raise ValueError(f"need l_max > l_min >= 0, got l_min={self.l_min}, l_max={self.l_max}")
        if self.w_x <= 0 or self.w_y <= 0:
            raise ValueError("pixel sizes w_x, w_y must be positive")
        if self.m <= 0:
            raise ValueError("max code value m must be positive")


@dataclass(frozen=True)
class CsfConstants:
    r: float = 0.7
    n_dct: int = 8
    l_t: float = 13.45
    s0: float = 94.7
    alpha_t: float = 0.649
    f0: float = 6.78
    alpha_f: float = 0.182
    l_f: float = 300.0
    k0: float = 3.125
    alpha_k: float = 0.0706
    l_k: float = 300.0


@dataclass(frozen=True)
class GainSchedule:
    lambda_l: float = 1.0
    lambda_h: float = 1.0
    f_c: float = 4.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.lambda_l, self.lambda_h, self.f_c)):
            raise ValueError("gain schedule values must be finite")
        if self.lambda_l < 0 or self.lambda_h < 0:
            raise ValueError("gains must be non-negative")
        # f_c = 0 is allowed for ablations (the sigmoid stays well defined)
        if self.f_c < 0:
            raise ValueError(f"cut-off frequency must be non-negative, got {self.f_c}")


# Per-dataset gains used for texture attacks; f_c is 4 for all.
PRESETS: dict[str, GainSchedule] = {
    "minc": GainSchedule(0.0, 3.0, 4.0),
    "gtos": GainSchedule(1.0, 3.0, 4.0),
    "dtd": GainSchedule(0.0, 1.5, 4.0),
    "4dlf": GainSchedule(0.0, 2.5, 4.0),
    "fmd": GainSchedule(0.0, 2.5, 4.0),
    "kth": GainSchedule(0.0, 2.0, 4.0),
    # overrides used for ResNet targets
    "dtd-resnet": GainSchedule(0.0, 2.0, 4.0),
    "4dlf-resnet": GainSchedule(0.0, 3.0, 4.0),
    "kth-resnet": GainSchedule(1.0, 3.0, 4.0),
}


def preset(name: str) -> GainSchedule:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def _check_band(k1: int, k2: int) -> None:
    if not (0 <= k1 < N and 0 <= k2 < N):
        raise ValueError(f"band index ({k1}, {k2}) outside 0..7")


def radial_frequency(k1: int, k2: int, disp: DisplayModel = DisplayModel(), n_dct: int = 8) -> float:
    """Radial frequency of DCT band ``(k1, k2)`` in cycles/degree."""
    _check_band(k1, k2)
    return math.sqrt((k1 / disp.w_x) ** 2 + (k2 / disp.w_y) ** 2) / (2 * n_dct)


def orientation(k1: int, k2: int, disp: DisplayModel = DisplayModel(), n_dct: int = 8) -> float:
    """Orientation angle (radians) of band ``(k1, k2)``; undefined for the DC band."""
    _check_band(k1, k2)
    if k1 == 0 and k2 == 0:
        raise ValueError("orientation is undefined for the DC band (0, 0)")
    f = radial_frequency(k1, k2, disp, n_dct)
    ratio = 2 * radial_frequency(k1, 0, disp, n_dct) * radial_frequency(0, k2, disp, n_dct) / f**2
    return math.asin(min(1.0, max(-1.0, ratio)))


def luminance_params(l: float, c: CsfConstants = CsfConstants()) -> tuple[float, float, float]:
    """Return ``(t_min, f_min, k)`` for background luminance ``l`` (cd/m^2)."""
    if not l > 0:
        raise ValueError(f"luminance must be positive, got {l}")
    if l <= c.l_t:
        t_min = (l / c.l_t) ** c.alpha_t * c.l_t / c.s0
    else:
        t_min = l / c.s0
    f_min = c.f0 * (l / c.l_f) ** c.alpha_f if l <= c.l_f else c.f0
    k = c.k0 * (l / c.l_k) ** c.alpha_k if l <= c.l_k else c.k0
    return t_min, f_min, k


def median_luminance(disp: DisplayModel = DisplayModel()) -> float:
    """Display luminance of code value 128."""
    return disp.l_min + 128 * (disp.l_max - disp.l_min) / disp.m


def contrast_sensitivity(
    k1: int, k2: int, l: float, disp: DisplayModel = DisplayModel(), c: CsfConstants = CsfConstants()
) -> float:
    """Threshold ``T(k1, k2)`` for an AC band at luminance ``l``."""
    if k1 == 0 and k2 == 0:
        raise ValueError("T(0, 0) is not defined by the model; use jnd_matrix")
    t_min, f_min, k = luminance_params(l, c)
    f = radial_frequency(k1, k2, disp, c.n_dct)
    theta = orientation(k1, k2, disp, c.n_dct)
    log_t = math.log10(t_min / (c.r + (1 - c.r) * math.cos(theta) ** 2))
    log_t += k * (math.log10(f) - math.log10(f_min)) ** 2
    return 10.0**log_t


def _dct_scale(k: int) -> float:
    return math.sqrt(1.0 / N) if k == 0 else math.sqrt(2.0 / N)


def jnd_matrix(disp: DisplayModel = DisplayModel(), c: CsfConstants = CsfConstants()) -> np.ndarray:
    """8x8 JND thresholds in code values, with the DC entry taken from its two neighbours."""
    l = median_luminance(disp)
    t = np.empty((N, N))
    for k1 in range(N):
        for k2 in range(N):
            if k1 or k2:
                t[k1, k2] = contrast_sensitivity(k1, k2, l, disp, c)
    t[0, 0] = min(t[0, 1], t[1, 0])
    scale = np.array([_dct_scale(k) for k in range(N)])
    out = disp.m * t / (2 * np.outer(scale, scale) * (disp.l_max - disp.l_min))
    out.setflags(write=False)
    return out


def frequency_grid(disp: DisplayModel = DisplayModel(), n_dct: int = 8) -> np.ndarray:
    return np.array([[radial_frequency(a, b, disp, n_dct) for b in range(N)] for a in range(N)])


def sigmoid(x):
    # numerically safe on both tails
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))


def gain_matrix(g: GainSchedule, disp: DisplayModel = DisplayModel()) -> np.ndarray:
    s = sigmoid(frequency_grid(disp) - g.f_c)
    out = g.lambda_l * (1 - s) + g.lambda_h * s
    out.setflags(write=False)
    return out


def effective_thresholds(
    g: GainSchedule, disp: DisplayModel = DisplayModel(), c: CsfConstants = CsfConstants()
) -> np.ndarray:
    """Per-band attack bounds: gain times JND threshold."""
    out = gain_matrix(g, disp) * jnd_matrix(disp, c)
    out.setflags(write=False)
    return out


def format_table(t: np.ndarray, digits: int = 2) -> str:
    return "\n".join(" ".join(f"{v:{digits + 4}.{digits}f}" for v in row) for row in t)


def to_csv(t: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in t:
        w.writerow([f"{v:.4f}" for v in row])
    return buf.getvalue()


def read_csv(text: str) -> np.ndarray:
    rows = [list(map(float, r)) for r in csv.reader(io.StringIO(text)) if r]
    t = np.array(rows)
    if t.shape != (N, N):
        raise ValueError(f"threshold CSV must be 8x8, got {t.shape}")
    return t
