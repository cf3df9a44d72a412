"""Universal perturbation optimisers: spatial sPGD/UPGD and their DCT-band counterparts.

All four variants share one loop. Every mini-batch is perturbed, clipped to
[0, 255] and fed to the frozen model. The attack loss gradient is pulled back
to the perturbation, and the perturbation is updated and then projected onto
its constraint set. Spatial variants take sign steps inside an l-infinity ball
of radius ``eps``. Frequency-tuned (FT) variants optimise normalised band
coefficients ``r`` in [-1, 1]. The spatial perturbation is
``idct(t_hat * r)``, so each DCT band stays within its own bound ``t_hat``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .perception import GainSchedule, effective_thresholds
from .texclass.data import LabeledSet, augment
from .texclass.model import TexModel, cross_entropy
from .transform import NUM_BANDS, bands_to_image, image_to_bands

log = logging.getLogger(__name__)


class Variant(str, Enum):
    SPGD = "spgd"
    UPGD = "upgd"
    FT_SPGD = "ft-spgd"
    FT_UPGD = "ft-upgd"

    @property
    def frequency_tuned(self) -> bool:
        return self in (Variant.FT_SPGD, Variant.FT_UPGD)

    @property
    def momentum(self) -> bool:
        return self in (Variant.UPGD, Variant.FT_UPGD)


# -- perturbations -----------------------------------------------------------


@dataclass
class Perturbation:
    """A universal additive perturbation and the constraint it satisfies.

    ``domain`` is ``"spatial"`` (constraint ``eps``) or ``"bands"``
    (constraint ``thresholds``, an 8x8 matrix). ``spatial`` is always populated.
    For band perturbations it is the inverse DCT of ``bands``.
    """

    domain: str
    spatial: np.ndarray
    bands: np.ndarray | None = None
    eps: float | None = None
    thresholds: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.spatial.shape)

    @classmethod
    def zeros_spatial(cls, shape, eps: float) -> "Perturbation":
        return cls("spatial", np.zeros(shape), eps=float(eps))

    @classmethod
    def from_bands(cls, bands: np.ndarray, thresholds: np.ndarray) -> "Perturbation":
        bands = np.asarray(bands, dtype=np.float64)
        return cls("bands", bands_to_image(bands), bands=bands, thresholds=np.asarray(thresholds, dtype=np.float64))

    def satisfies_constraint(self) -> bool:
        """Exact (zero tolerance) check of the l-infinity or per-band bound."""
        if self.domain == "spatial":
            return bool(np.all(np.abs(self.spatial) <= self.eps))
        bound = self.thresholds.reshape(1, NUM_BANDS, 1, 1)
        return bool(np.all(np.abs(self.bands) <= bound))

    def copy(self) -> "Perturbation":
        return Perturbation(
            self.domain,
            self.spatial.copy(),
            None if self.bands is None else self.bands.copy(),
            self.eps,
            None if self.thresholds is None else self.thresholds.copy(),
        )


def apply_perturbation(img, p: Perturbation) -> np.ndarray:
    """Add ``p`` to an image or a batch of images and clip to [0, 255]."""
    x = np.asarray(img, dtype=np.float64)
    if x.shape[-3:] != p.spatial.shape:
        raise ValueError(f"image shape {x.shape[-3:]} does not match perturbation shape {p.spatial.shape}")
    return np.clip(x + p.spatial, 0.0, 255.0)


def project_spatial_linf(p: Perturbation, eps: float) -> Perturbation:
    if p.domain != "spatial":
        raise ValueError("l-infinity projection needs a spatial perturbation")
    return Perturbation("spatial", np.clip(p.spatial, -eps, eps), eps=float(eps))


def project_bands(p: Perturbation, thresholds) -> Perturbation:
    """Clamp every coefficient of band k to [-t_hat(k), t_hat(k)]."""
    if p.domain != "bands":
        raise ValueError("band projection needs a DCT-band perturbation")
    t = np.asarray(thresholds, dtype=np.float64)
    if t.shape != (8, 8) or np.any(t < 0):
        raise ValueError("thresholds must be a non-negative 8x8 matrix")
    bound = t.reshape(1, NUM_BANDS, 1, 1)
    return Perturbation.from_bands(np.clip(p.bands, -bound, bound), t)


def random_perturbation(shape, rng: np.random.Generator, eps: float | None = None, thresholds=None) -> Perturbation:
    """Uniform sample from the constraint set (the l-inf ball, or the per-band box)."""
    c, h, w = shape
    if thresholds is None:
        return Perturbation("spatial", rng.uniform(-eps, eps, size=shape), eps=float(eps))
    t = np.asarray(thresholds, dtype=np.float64)
    r = rng.uniform(-1.0, 1.0, size=(c, NUM_BANDS, h // 8, w // 8))
    return Perturbation.from_bands(r * t.reshape(1, NUM_BANDS, 1, 1), t)


# -- losses --------------------------------------------------------------------


def loss_tar(logits, true_labels) -> tuple[float, np.ndarray]:
    """Negated cross-entropy against the true labels (minimising it pushes away from them)."""
    loss, grad = cross_entropy(logits, true_labels)
    return -loss, -grad


def least_likely(logits) -> np.ndarray:
    """Per-row argmin of the logits; ties go to the lowest index."""
    return np.argmin(np.asarray(logits), axis=1)


def loss_llc(logits, llc_labels) -> tuple[float, np.ndarray]:
    """Cross-entropy towards the least-likely class of the clean prediction."""
    return cross_entropy(logits, llc_labels)


# -- Adam -----------------------------------------------------------------------


@dataclass
class AdamState:
    shape: tuple[int, ...]
    alpha: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)


def adam_step(var: np.ndarray, grad: np.ndarray, st: AdamState) -> np.ndarray:
    """One bias-corrected Adam descent step. Updates ``st`` in place and returns the new variable."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != st.shape or np.shape(var) != st.shape:
        raise ValueError(f"shape mismatch: var {np.shape(var)}, grad {grad.shape}, state {st.shape}")
    st.step += 1
    st.m = st.beta1 * st.m + (1 - st.beta1) * grad
    st.v = st.beta2 * st.v + (1 - st.beta2) * grad * grad
    m_hat = st.m / (1 - st.beta1**st.step)
    v_hat = st.v / (1 - st.beta2**st.step)
    return var - st.alpha * m_hat / (np.sqrt(v_hat) + st.eps)


# -- attack loop --------------------------------------------------------------------


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters.

    ``step`` is in code values and is used by spatial variants. ``ft_lr`` is the
    Adam step on normalised band coefficients. ``ft_step`` is the sign step used
    when ``ft_optimizer == "sign"``.
    """

    variant: Variant = Variant.FT_SPGD
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    min_gain: float = 0.005
    eps: float = 10.0
    step: float = 1.0
    momentum: float = 0.9
    decay_every: int = 10
    gain: GainSchedule = field(default_factory=lambda: GainSchedule(0.0, 3.0, 4.0))
    ft_optimizer: str = "adam"
    ft_lr: float = 0.02
    ft_step: float = 0.05
    reparam: str = "clamp"
    loss: str = "tar"
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.ft_optimizer not in ("adam", "sign"):
            raise ValueError(f"ft_optimizer must be 'adam' or 'sign', got {self.ft_optimizer!r}")
        if self.reparam not in ("clamp", "tanh"):
            raise ValueError(f"reparam must be 'clamp' or 'tanh', got {self.reparam!r}")
        if self.loss not in ("tar", "llc"):
            raise ValueError(f"loss must be 'tar' or 'llc', got {self.loss!r}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")

    def with_(self, **kw) -> "AttackConfig":
        return replace(self, **kw)


@dataclass
class CurvePoint:
    epoch: int
    fooling_rate: float
    loss: float
    best_fooling_rate: float


@dataclass
class AttackResult:
    perturbation: Perturbation
    curve: list[CurvePoint]
    best_fooling_rate: float
    best_epoch: int

    @property
    def epochs_run(self) -> int:
        return len(self.curve)


def perturbed_predictions(model: TexModel, images: np.ndarray, spatial: np.ndarray, batch_size: int = 128):
    out = np.empty(len(images), dtype=np.int64)
    for s in range(0, len(images), batch_size):
        out[s : s + batch_size] = model.predict(np.clip(images[s : s + batch_size] + spatial, 0.0, 255.0))
    return out


def clean_logits(model: TexModel, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    return np.concatenate([model.forward(images[s : s + batch_size]) for s in range(0, len(images), batch_size)])


def _l1_normalise(g: np.ndarray) -> np.ndarray:
    n = np.abs(g).sum()
    return g / n if n > 0 else g


class _SpatialState:
    def __init__(self, shape, cfg: AttackConfig):
        self.cfg = cfg
        self.delta = np.zeros(shape)
        self.accum = np.zeros(shape)

    def spatial(self) -> np.ndarray:
        return self.delta

    def update(self, grad: np.ndarray, epoch: int) -> None:
        cfg = self.cfg
        if cfg.variant.momentum:
            self.accum = cfg.momentum * self.accum + _l1_normalise(grad)
            direction = self.accum
            step = cfg.step * 0.5 ** ((epoch - 1) // cfg.decay_every)
        else:
            direction = grad
            step = cfg.step
        self.delta = np.clip(self.delta - step * np.sign(direction), -cfg.eps, cfg.eps)

    def perturbation(self) -> Perturbation:
        return Perturbation("spatial", self.delta.copy(), eps=float(self.cfg.eps))


class _BandState:
    """Normalised band coefficients; the DCT perturbation is ``t_hat * r`` (or ``t_hat * tanh(u)``)."""

    def __init__(self, shape, cfg: AttackConfig, thresholds: np.ndarray):
        c, h, w = shape
        self.cfg = cfg
        self.t = np.asarray(thresholds, dtype=np.float64)
        self.scale = self.t.reshape(1, NUM_BANDS, 1, 1)
        self.var = np.zeros((c, NUM_BANDS, h // 8, w // 8))
        self.accum = np.zeros_like(self.var)
        self.adam = AdamState(self.var.shape, alpha=cfg.ft_lr)
        self._sync()

    def _sync(self) -> None:
        r = np.tanh(self.var) if self.cfg.reparam == "tanh" else self.var
        # explicit clamp keeps the bound exact even after rounding in r * t_hat
        self.bands = np.clip(r * self.scale, -self.scale, self.scale)
        self.delta = bands_to_image(self.bands)

    def spatial(self) -> np.ndarray:
        return self.delta

    def update(self, grad: np.ndarray, epoch: int) -> None:
        cfg = self.cfg
        gvar = image_to_bands(grad) * self.scale
        if cfg.reparam == "tanh":
            gvar = gvar * (1.0 - np.tanh(self.var) ** 2)
        if cfg.variant.momentum:
            self.accum = cfg.momentum * self.accum + _l1_normalise(gvar)
            gvar = self.accum
        if cfg.ft_optimizer == "adam":
            self.var = adam_step(self.var, gvar, self.adam)
        else:
            step = cfg.ft_step
            if cfg.variant.momentum:
                step *= 0.5 ** ((epoch - 1) // cfg.decay_every)
            self.var = self.var - step * np.sign(gvar)
        if cfg.reparam == "clamp":
            self.var = np.clip(self.var, -1.0, 1.0)
        self._sync()

    def perturbation(self) -> Perturbation:
        return Perturbation("bands", self.delta.copy(), self.bands.copy(), thresholds=self.t.copy())


def resolve_thresholds(cfg: AttackConfig, display=None) -> np.ndarray:
    from .perception import DisplayModel

    return np.array(effective_thresholds(cfg.gain, display or DisplayModel()))


def run_attack(
    model: TexModel,
    attack_set: LabeledSet,
    cfg: AttackConfig,
    thresholds=None,
    eps: float | None = None,
    on_epoch=None,
) -> AttackResult:
    """Optimise a universal perturbation on ``attack_set`` against a frozen ``model``.

    Spatial variants need ``eps`` (falls back to ``cfg.eps``); FT variants need
    the 8x8 ``thresholds``. Training stops once the attack-set fooling rate has
    not improved by more than ``cfg.min_gain`` for ``cfg.patience`` epochs
    (counted from the first epoch with a non-zero fooling rate), or after
    ``cfg.max_epochs``. The best perturbation seen is returned.
    """
    if len(attack_set) == 0:
        raise ValueError("attack set is empty")
    images = attack_set.images
    shape = images.shape[1:]
    rng = np.random.default_rng(cfg.seed)
    if cfg.variant.frequency_tuned:
        if thresholds is None:
            raise ValueError(f"{cfg.variant.value} needs per-band thresholds")
        thresholds = np.asarray(thresholds, dtype=np.float64)
        if not np.any(thresholds > 0):
            log.warning("all band thresholds are zero; the perturbation will be zero")
        state = _BandState(shape, cfg, thresholds)
    else:
        eps = cfg.eps if eps is None else eps
        if eps is None:
            raise ValueError(f"{cfg.variant.value} needs an l-infinity radius eps")
        cfg = cfg.with_(eps=float(eps))
        if cfg.eps == 0:
            log.warning("eps is zero; the perturbation will be zero")
        state = _SpatialState(shape, cfg)

    logits0 = clean_logits(model, images)
    clean_pred = np.argmax(logits0, axis=1)
    targets = attack_set.labels if cfg.loss == "tar" else least_likely(logits0)
    loss_fn = loss_tar if cfg.loss == "tar" else loss_llc

    n = len(images)
    per_epoch = max(n, cfg.batch_size) if cfg.augment else n
    best = state.perturbation()
    best_fr, best_epoch = 0.0, 0
    ref_fr, stale = 0.0, 0
    curve: list[CurvePoint] = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = np.concatenate([rng.permutation(n) for _ in range(-(-per_epoch // n))])[:per_epoch]
        losses = []
        for s in range(0, per_epoch, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            x = images[idx]
            if cfg.augment:
                x = augment(x, rng)
            xp = x + state.spatial()
            inside = (xp >= 0.0) & (xp <= 255.0)
            logits, cache = model.forward(np.clip(xp, 0.0, 255.0), return_cache=True)
            loss, dlogits = loss_fn(logits, targets[idx])
            _, dx = model.backward_from(cache, dlogits)
            # the clip passes gradient only where it is inactive
            grad = (dx * inside).sum(axis=0)
            state.update(grad, epoch)
            losses.append(loss)

        pred = perturbed_predictions(model, images, state.spatial())
        fr = float(np.mean(pred != clean_pred))
        if fr > best_fr:
            best, best_fr, best_epoch = state.perturbation(), fr, epoch
        curve.append(CurvePoint(epoch, fr, float(np.mean(losses)), best_fr))
        if on_epoch is not None:
            on_epoch(epoch, state.perturbation(), curve[-1])
        log.debug("epoch %d: fooling rate %.4f (best %.4f)", epoch, fr, best_fr)
        if fr > ref_fr + cfg.min_gain:
            ref_fr, stale = fr, 0
        elif best_fr > 0:
            # epochs before the first success are warm-up, not a plateau
            stale += 1
            if stale >= cfg.patience:
                break

    return AttackResult(best, curve, best_fr, best_epoch)
