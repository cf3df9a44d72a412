import math

import numpy as np

from freqtune.attack import CurvePoint
from freqtune.evaluate import AblationRow, AttackReport, Rate, SweepRow
from freqtune.perception import jnd_matrix
from freqtune.plotting import (
    plot_ablation,
    plot_cross,
    plot_curve,
    plot_perturbation,
    plot_report,
    plot_sweep,
    plot_thresholds,
)

PNG = b"\x89PNG"


def _twice(fn, tmp_path, *args):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    fn(*args, a)
    fn(*args, b)
    assert a.read_bytes()[:4] == PNG
    assert a.read_bytes() == b.read_bytes()


def test_curve(tmp_path):
    curve = [CurvePoint(e, 0.1 * e, -e, 0.1 * e) for e in range(1, 6)]
    _twice(plot_curve, tmp_path, curve)


def test_thresholds(tmp_path):
    _twice(plot_thresholds, tmp_path, jnd_matrix())


def test_perturbation(tmp_path):
    r = np.random.default_rng(0)
    _twice(plot_perturbation, tmp_path, r.normal(0, 5, (3, 16, 16)))
    plot_perturbation(np.zeros((1, 8, 8)), tmp_path / "z.png", np.full((2, 1, 8, 8), 100.0))
    assert (tmp_path / "z.png").stat().st_size > 0


def test_report(tmp_path):
    reps = [
        AttackReport("spgd", 0, Rate(1, 2), Rate(2, 2), Rate(1, 2), 10.0, 28.1),
        AttackReport("ft-spgd", 0, Rate(0, 2), Rate(2, 2), Rate(2, 2), 0.0, math.inf),
    ]
    _twice(plot_report, tmp_path, reps)


def test_sweep_and_ablation(tmp_path):
    rows = [SweepRow(f, a, 0.5, 10) for f in (1.0, 0.1) for a in (True, False)]
    _twice(plot_sweep, tmp_path, rows)
    abl = [AblationRow(0, h, 4, 0.2 * h, 30 - h if h else math.inf) for h in (0, 1, 2)]
    _twice(plot_ablation, tmp_path, abl)


def test_cross(tmp_path):
    _twice(plot_cross, tmp_path, np.array([[0.8, 0.3], [0.2, 0.7]]), ["m0", "m1"], ["m0", "m1"])
