"""Orthogonal 8x8 type-II block DCT and band-major layout conversion.

A spatial image of shape ``(C, H, W)`` maps to a band tensor of shape
``(C, 64, H // 8, W // 8)``: entry ``[c, k, i, j]`` is coefficient
``(k // 8, k % 8)`` of block ``(i, j)`` in channel ``c``.
"""

from __future__ import annotations

import numpy as np

N = 8
NUM_BANDS = N * N


def basis_matrix(n: int = N) -> np.ndarray:
    """Return the orthonormal DCT-II matrix ``D`` with ``D[k, m] = c~(k) cos(pi (2m+1) k / 2n)``."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    scale = np.where(k == 0, np.sqrt(1.0 / n), np.sqrt(2.0 / n))
    return scale * np.cos(np.pi * (2 * m + 1) * k / (2 * n))


DCT_MATRIX = basis_matrix()
DCT_MATRIX.setflags(write=False)


def basis_image(k1: int, k2: int) -> np.ndarray:
    """The 8x8 spatial pattern whose only nonzero DCT coefficient is ``(k1, k2) = 1``."""
    return np.outer(DCT_MATRIX[k1], DCT_MATRIX[k2])


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")


def dct_forward(block) -> np.ndarray:
    """Forward 2-D DCT of one 8x8 block."""
    b = np.asarray(block, dtype=np.float64)
    if b.shape != (N, N):
        raise ValueError(f"expected an 8x8 block, got shape {b.shape}")
    _check_finite(b, "block")
    return DCT_MATRIX @ b @ DCT_MATRIX.T


def dct_inverse(coeffs) -> np.ndarray:
    """Inverse 2-D DCT of one 8x8 coefficient block."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (N, N):
        raise ValueError(f"expected an 8x8 block, got shape {c.shape}")
    _check_finite(c, "coefficients")
    return DCT_MATRIX.T @ c @ DCT_MATRIX


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3:
        raise ValueError(f"expected a C x H x W image, got {img.ndim} dims with shape {img.shape}")
    _, h, w = img.shape
    if h % N or w % N:
        raise ValueError(f"image height and width must be multiples of 8, got H={h}, W={w}")


def image_to_bands(img) -> np.ndarray:
    """Blockwise DCT of a ``(C, H, W)`` image into a ``(C, 64, H/8, W/8)`` band tensor.

    Also accepts a leading batch axis, ``(N, C, H, W) -> (N, C, 64, H/8, W/8)``.
    """
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 4:
        return np.stack([image_to_bands(im) for im in x])
    _check_image(x)
    c, h, w = x.shape
    bh, bw = h // N, w // N
    # (c, bh, n1, bw, n2)
    blocks = x.reshape(c, bh, N, bw, N)
    coeffs = np.einsum("km,cimjn,ln->cklij", DCT_MATRIX, blocks, DCT_MATRIX, optimize=True)
    return coeffs.reshape(c, NUM_BANDS, bh, bw)


def bands_to_image(bands) -> np.ndarray:
    """Inverse of :func:`image_to_bands`. The result is not clipped."""
    b = np.asarray(bands, dtype=np.float64)
    if b.ndim == 5:
        return np.stack([bands_to_image(x) for x in b])
    if b.ndim != 4 or b.shape[1] != NUM_BANDS:
        raise ValueError(f"expected a band tensor of shape (C, 64, Bh, Bw), got {b.shape}")
    c, _, bh, bw = b.shape
    coeffs = b.reshape(c, N, N, bh, bw)
    blocks = np.einsum("km,cklij,ln->cimjn", DCT_MATRIX, coeffs, DCT_MATRIX, optimize=True)
    return blocks.reshape(c, bh * N, bw * N)


def center_crop8(img: np.ndarray) -> np.ndarray:
    """Center-crop a ``(C, H, W)`` image so both spatial sides are multiples of 8."""
    _, h, w = img.shape
    nh, nw = h - h % N, w - w % N
    if nh == 0 or nw == 0:
        raise ValueError(f"image of size {h}x{w} is smaller than one 8x8 block")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[:, top : top + nh, left : left + nw]
