from __future__ import annotations

import logging

import numpy as np

from .data import LabeledSet, augment
from .model import TexModel

log = logging.getLogger(__name__)


def accuracy(m: TexModel, data: LabeledSet, batch_size: int = 128) -> float:
    if len(data) == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    hits = 0
    for s in range(0, len(data), batch_size):
        hits += int(np.sum(m.predict(data.images[s : s + batch_size]) == data.labels[s : s + batch_size]))
    return hits / len(data)


def train_classifier(
    m: TexModel,
    train: LabeledSet,
    epochs: int = 30,
    batch_size: int = 8,
    lr: float = 0.2,
    seed: int = 0,
    heldout: LabeledSet | None = None,
    schedule: str = "cosine",
    flip_crop: bool = False,
) -> list[float]:
    """Mini-batch SGD on cross-entropy, in place. Returns per-epoch held-out top-1 accuracy.

    The step size follows a half-cosine from ``lr`` towards zero over the run
    (``schedule="constant"`` keeps it fixed). When ``heldout`` is None the
    training set itself is scored.
    """
    if schedule not in ("cosine", "constant"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if len(train) == 0:
        raise ValueError("training set is empty")
    if len(np.unique(train.labels)) < 2:
        log.warning("training set has a single class; accuracy is trivially 100%%")
    heldout = train if heldout is None else heldout
    rng = np.random.default_rng(seed)
    history = []
    with m.training():
        for epoch in range(epochs):
            step = lr * 0.5 * (1 + np.cos(np.pi * epoch / epochs)) if schedule == "cosine" else lr
            order = rng.permutation(len(train))
            for s in range(0, len(order), batch_size):
                idx = order[s : s + batch_size]
                x = train.images[idx]
                if flip_crop:
                    x = augment(x, rng)
                _, grads, _ = m.backward(x, train.labels[idx], need_input_grad=False)
                for k, g in grads.items():
                    m.grads[k][...] = g
                    m.params[k] -= step * g
            history.append(accuracy(m, heldout))
            log.info("epoch %d: held-out top-1 %.4f", epoch + 1, history[-1])
    return history
