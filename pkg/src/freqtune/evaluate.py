"""Metrics and experiment harnesses: fooling rate, accuracy, PSNR, transfer, data-size sweep, ablation."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import product

import numpy as np

from .attack import AttackConfig, Perturbation, perturbed_predictions, random_perturbation, run_attack
from .perception import DisplayModel, GainSchedule, effective_thresholds
from .texclass.data import LabeledSet, subsample
from .texclass.model import TexModel
from .transform import DCT_MATRIX

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rate:
    """An exact fraction ``k / n``."""

    k: int
    n: int

    @property
    def value(self) -> float:
        return self.k / self.n

    def __float__(self) -> float:
        return self.value


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FREQTUNE_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items)) or 1
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _predict(model: TexModel, images: np.ndarray, p: Perturbation | None) -> np.ndarray:
    if p is None:
        return perturbed_predictions(model, images, 0.0)
    if images.shape[1:] != p.spatial.shape:
        raise ValueError(f"image shape {images.shape[1:]} does not match perturbation {p.spatial.shape}")
    return perturbed_predictions(model, images, p.spatial)


def fooling_rate(model: TexModel, data: LabeledSet, p: Perturbation | None) -> Rate:
    """Fraction of samples whose predicted class changes once ``p`` is added."""
    if len(data) == 0:
        raise ValueError("cannot compute a fooling rate on an empty set")
    clean = _predict(model, data.images, None)
    pert = clean if p is None else _predict(model, data.images, p)
    return Rate(int(np.sum(clean != pert)), len(data))


def fooling_rate_images(model: TexModel, clean_images: np.ndarray, adv_images: np.ndarray) -> Rate:
    """Fooling rate from pre-perturbed images (e.g. written to disk by ``apply``)."""
    if clean_images.shape != adv_images.shape or len(clean_images) == 0:
        raise ValueError("clean and adversarial image sets must be non-empty with equal shapes")
    clean = _predict(model, clean_images, None)
    adv = _predict(model, adv_images, None)
    return Rate(int(np.sum(clean != adv)), len(clean))


def top1_accuracy(model: TexModel, data: LabeledSet, p: Perturbation | None = None) -> Rate:
    if len(data) == 0:
        raise ValueError("cannot compute accuracy on an empty set")
    pred = _predict(model, data.images, p)
    return Rate(int(np.sum(pred == data.labels)), len(data))


def psnr(clean: np.ndarray, other: np.ndarray, peak: float = 255.0) -> float:
    mse = float(np.mean((np.asarray(clean, dtype=np.float64) - other) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)


def perceptibility_stats(data: LabeledSet, p: Perturbation) -> tuple[float, float]:
    """(l-inf of the perturbation, mean PSNR between clean and clipped perturbed images)."""
    if len(data) == 0:
        raise ValueError("empty set")
    linf = float(np.max(np.abs(p.spatial)))
    if linf == 0:
        return 0.0, math.inf
    vals = [psnr(x, np.clip(x + p.spatial, 0.0, 255.0)) for x in data.images]
    return linf, float(np.mean(vals))


def linf_bound(thresholds: np.ndarray) -> float:
    """Largest spatial l-inf reachable by a band perturbation bounded by ``thresholds``.

    A pixel is a linear combination of the 64 basis values at its position, so
    the worst case is ``max_n sum_k t(k) |B_k(n)|``, attained when every
    coefficient takes the matching sign. Since ``|B_k(n)| <= c~(k1) c~(k2)``,
    the result never exceeds ``sum_k t(k) / 4``.
    """
    b = np.abs(np.einsum("ai,bj->abij", DCT_MATRIX, DCT_MATRIX)).reshape(64, 64)
    return float(np.max(np.asarray(thresholds, dtype=np.float64).reshape(64) @ b))


def config_hash(cfg) -> str:
    d = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else dict(cfg)
    text = repr(sorted((k, repr(v)) for k, v in d.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class AttackReport:
    variant: str
    seed: int
    fooling_rate: Rate
    clean_top1: Rate
    perturbed_top1: Rate
    linf: float
    psnr_db: float
    config_hash: str = ""
    split: str = "70/15/15"

    @property
    def fr(self) -> float:
        return self.fooling_rate.value


def evaluate(model: TexModel, data: LabeledSet, p: Perturbation, variant: str = "", seed: int = 0, cfg=None) -> AttackReport:
    linf, ps = perceptibility_stats(data, p)
    return AttackReport(
        variant=variant,
        seed=seed,
        fooling_rate=fooling_rate(model, data, p),
        clean_top1=top1_accuracy(model, data),
        perturbed_top1=top1_accuracy(model, data, p),
        linf=linf,
        psnr_db=ps,
        config_hash=config_hash(cfg) if cfg is not None else "",
    )


# -- harnesses ----------------------------------------------------------------------


def constraint_for(cfg: AttackConfig, display: DisplayModel | None = None, gain: GainSchedule | None = None):
    """(thresholds, eps) pair for a config: FT variants get t_hat, spatial ones eps."""
    if cfg.variant.frequency_tuned:
        return np.array(effective_thresholds(gain or cfg.gain, display or DisplayModel())), None
    return None, cfg.eps


def attack_and_score(model, attack_set, test_set, cfg, display=None):
    thresholds, eps = constraint_for(cfg, display)
    res = run_attack(model, attack_set, cfg, thresholds=thresholds, eps=eps)
    return res, fooling_rate(model, test_set, res.perturbation)


def random_baseline(model, data: LabeledSet, cfg: AttackConfig, seeds, display=None) -> float:
    """Mean fooling rate of perturbations drawn uniformly from the same constraint set."""
    thresholds, eps = constraint_for(cfg, display)
    frs = []
    for s in seeds:
        p = random_perturbation(data.images.shape[1:], np.random.default_rng(s), eps=eps, thresholds=thresholds)
        frs.append(fooling_rate(model, data, p).value)
    return float(np.mean(frs))


def cross_model_matrix(models: list[TexModel], data: LabeledSet, perturbations: list[Perturbation]):
    """FR of perturbation i on model j, with row means (per perturbation) and column means (per model)."""
    cells = list(product(range(len(perturbations)), range(len(models))))
    vals = _pmap(lambda ij: fooling_rate(models[ij[1]], data, perturbations[ij[0]]).value, cells)
    mat = np.array(vals, dtype=np.float64).reshape(len(perturbations), len(models))
    return mat, mat.mean(axis=1), mat.mean(axis=0)


@dataclass
class SweepRow:
    fraction: float
    augment: bool
    fr: float
    n_samples: int


def data_size_sweep(
    model: TexModel,
    attack_set: LabeledSet,
    test_set: LabeledSet,
    fractions,
    augment: bool,
    cfg: AttackConfig,
    display: DisplayModel | None = None,
) -> list[SweepRow]:
    """Attack with seeded subsets of the attack set; rows sorted by descending fraction."""
    rows = []
    for frac in sorted(set(float(f) for f in fractions), reverse=True):
        sub = subsample(attack_set, frac, seed=cfg.seed)
        if len(sub) == 0:
            log.warning("fraction %g of %d samples is empty; skipped", frac, len(attack_set))
            continue
        _, fr = attack_and_score(model, sub, test_set, cfg.with_(augment=augment), display)
        rows.append(SweepRow(frac, augment, fr.value, len(sub)))
    return rows


@dataclass
class AblationRow:
    lambda_l: float
    lambda_h: float
    f_c: float
    fr: float
    psnr_db: float


def ablation_grid(
    model: TexModel,
    attack_set: LabeledSet,
    test_set: LabeledSet,
    lambda_l_list,
    lambda_h_list,
    f_c_list,
    cfg: AttackConfig,
    display: DisplayModel | None = None,
) -> list[AblationRow]:
    """One FT attack per (lambda_l, lambda_h, f_c) cell of the Cartesian grid."""
    if not (len(lambda_l_list) and len(lambda_h_list) and len(f_c_list)):
        raise ValueError("ablation lists must be non-empty")
    if not cfg.variant.frequency_tuned:
        raise ValueError("ablation needs a frequency-tuned variant")
    cells = list(product(lambda_l_list, lambda_h_list, f_c_list))

    def run(cell):
        ll, lh, fc = cell
        c = cfg.with_(gain=GainSchedule(ll, lh, fc))
        res, fr = attack_and_score(model, attack_set, test_set, c, display)
        _, ps = perceptibility_stats(test_set, res.perturbation)
        return AblationRow(float(ll), float(lh), float(fc), fr.value, ps)

    return _pmap(run, cells)


# -- CSV output --------------------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else f"{float(v):.6f}"
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


REPORT_HEADER = ["variant", "seed", "fr", "clean_top1", "pert_top1", "linf", "psnr_db", "fr_count", "n"]


def report_rows(reports: list[AttackReport]):
    for r in reports:
        yield [
            r.variant, r.seed, r.fooling_rate.value, r.clean_top1.value, r.perturbed_top1.value,
            r.linf, r.psnr_db, r.fooling_rate.k, r.fooling_rate.n,
        ]


def write_report_csv(path, reports: list[AttackReport]) -> None:
    write_csv(path, REPORT_HEADER, report_rows(reports))


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    write_csv(path, ["fraction", "augment", "fr"], ([r.fraction, r.augment, r.fr] for r in rows))


def write_ablation_csv(path, rows: list[AblationRow]) -> None:
    write_csv(
        path,
        ["lambda_l", "lambda_h", "f_c", "fr", "psnr_db"],
        ([r.lambda_l, r.lambda_h, r.f_c, r.fr, r.psnr_db] for r in rows),
    )


def write_cross_csv(path, names_src, names_tgt, mat) -> None:
    rows = [[s, t, mat[i, j]] for i, s in enumerate(names_src) for j, t in enumerate(names_tgt)]
    write_csv(path, ["source_model", "target_model", "fr"], rows)


def write_curve_csv(path, curve) -> None:
    write_csv(path, ["epoch", "attack_set_fooling_rate", "loss"], ([c.epoch, c.fooling_rate, c.loss] for c in curve))


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


__all__ = [
    "AblationRow", "AttackReport", "Rate", "SweepRow", "ablation_grid", "attack_and_score", "constraint_for",
    "cross_model_matrix", "data_size_sweep", "evaluate", "fooling_rate", "fooling_rate_images", "linf_bound",
    "perceptibility_stats", "psnr", "random_baseline", "top1_accuracy",
]
