"""Small differentiable texture classifier with hand-written backpropagation.

Architecture (fixed)::

    x / 255 -> conv3x3(C->8, pad 1) -> ReLU -> avgpool 2x2
            -> conv3x3(8->16, pad 1) -> ReLU -> global average pool -> linear(16->K)
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

CONV1_OUT = 8
CONV2_OUT = 16
PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, 9*C, H*W) patches of the zero-padded input, ordered (c, di, dj)."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((n, c, 3, 3, h, w))
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i : i + h, j : j + w]
    return cols.reshape(n, c * 9, h * w)


def conv3x3_forward(x, w, b):
    """3x3 cross-correlation, stride 1, zero padding 1. Returns output and the patch matrix."""
    n, _, h, wd = x.shape
    cols = _im2col(x)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(n, -1, h, wd), cols


def conv3x3_backward(dout, cols, w, need_dx: bool = True):
    n, o, h, wd = dout.shape
    c = w.shape[1]
    d = dout.reshape(n, o, h * wd)
    dw = (d @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = d.sum(axis=(0, 2))
    if not need_dx:
        return None, dw, db
    dcols = (w.reshape(o, -1).T @ d).reshape(n, c, 3, 3, h, wd)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, i, j]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def avgpool2_forward(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {n} class indices in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class TexModel:
    """Parameters, gradient buffers and forward/backward passes of the classifier.

    Inference on a frozen model is thread-safe. While :meth:`training` is
    active, calls from any other thread raise ``RuntimeError``.
    """

    def __init__(self, channels: int = 3, num_classes: int = 4, seed: int | None = 0):
        if num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        self.channels = channels
        self.num_classes = num_classes
        shapes = self.param_shapes()
        self.params = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.grads = {name: np.zeros(shape) for name, shape in shapes.items()}
        if seed is not None:
            self.init_weights(seed)
        self._guard = threading.Lock()
        self._trainer: int | None = None

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "conv1_w": (CONV1_OUT, self.channels, 3, 3),
            "conv1_b": (CONV1_OUT,),
            "conv2_w": (CONV2_OUT, CONV1_OUT, 3, 3),
            "conv2_b": (CONV2_OUT,),
            "fc_w": (self.num_classes, CONV2_OUT),
            "fc_b": (self.num_classes,),
        }

    def init_weights(self, seed: int) -> None:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        for name in ("conv1_w", "conv2_w", "fc_w"):
            shape = self.params[name].shape
            rf = int(np.prod(shape[2:])) if len(shape) == 4 else 1
            fan_in, fan_out = shape[1] * rf, shape[0] * rf
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[name] = rng.uniform(-lim, lim, size=shape)
        for name in ("conv1_b", "conv2_b", "fc_b"):
            self.params[name] = np.zeros(self.params[name].shape)

    def copy(self) -> "TexModel":
        m = TexModel(self.channels, self.num_classes, seed=None)
        m.params = {k: v.copy() for k, v in self.params.items()}
        return m

    # -- concurrency guard -------------------------------------------------

    @contextmanager
    def training(self):
        with self._guard:
            if self._trainer is not None:
                raise RuntimeError("model is already being trained")
            self._trainer = threading.get_ident()
        try:
            yield self
        finally:
            with self._guard:
                self._trainer = None

    def _check_access(self) -> None:
        owner = self._trainer
        if owner is not None and owner != threading.get_ident():
            raise RuntimeError("model is being trained by another thread")

    # -- passes -------------------------------------------------------------

    def _as_batch(self, batch) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected a batch of {self.channels}-channel images, got shape {x.shape}")
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"image sides must be even, got {x.shape[2:]}")
        return x

    def forward(self, batch, return_cache: bool = False):
        """Logits for a batch of images in code values [0, 255]."""
        self._check_access()
        x = self._as_batch(batch)
        p = self.params
        a0 = x / 255.0
        z1, cols1 = conv3x3_forward(a0, p["conv1_w"], p["conv1_b"])
        a1 = np.maximum(z1, 0.0)
        a2 = avgpool2_forward(a1)
        z3, cols3 = conv3x3_forward(a2, p["conv2_w"], p["conv2_b"])
        a3 = np.maximum(z3, 0.0)
        h = a3.mean(axis=(2, 3))
        logits = h @ p["fc_w"].T + p["fc_b"]
        if not return_cache:
            return logits
        return logits, dict(cols1=cols1, z1=z1, cols3=cols3, z3=z3, h=h)

    def backward_from(
        self, cache: dict, dlogits: np.ndarray, need_input_grad: bool = True
    ) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
        """Backpropagate a logit gradient.

        Returns the parameter gradients and the gradient w.r.t. the input
        pixels in code-value units (None when ``need_input_grad`` is False).
        """
        self._check_access()
        p = self.params
        g = {}
        g["fc_w"] = dlogits.T @ cache["h"]
        g["fc_b"] = dlogits.sum(axis=0)
        dh = dlogits @ p["fc_w"]
        z3 = cache["z3"]
        dz3 = (dh / (z3.shape[2] * z3.shape[3]))[:, :, None, None] * (z3 > 0)
        da2, g["conv2_w"], g["conv2_b"] = conv3x3_backward(dz3, cache["cols3"], p["conv2_w"])
        dz1 = avgpool2_backward(da2) * (cache["z1"] > 0)
        da0, g["conv1_w"], g["conv1_b"] = conv3x3_backward(dz1, cache["cols1"], p["conv1_w"], need_input_grad)
        grads = {k: g[k] for k in PARAM_NAMES}
        if da0 is None:
            return grads, None
        return grads, da0 / 255.0

    def backward(self, batch, labels, need_input_grad: bool = True):
        """Cross-entropy loss, parameter gradients and input gradients for a labelled batch."""
        logits, cache = self.forward(batch, return_cache=True)
        loss, dlogits = cross_entropy(logits, labels)
        pg, dx = self.backward_from(cache, dlogits, need_input_grad)
        return loss, pg, dx

    def predict(self, batch) -> np.ndarray:
        """Top-1 class per image; ties go to the lowest index (``np.argmax`` semantics)."""
        return np.argmax(self.forward(batch), axis=1)


def forward(m: TexModel, batch) -> np.ndarray:
    return m.forward(batch)


def predict_top1(m: TexModel, img) -> int:
    return int(m.predict(np.asarray(img)[None] if np.ndim(img) == 3 else img)[0])
