import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqtune.perception import (
    PRESETS,
    CsfConstants,
    DisplayModel,
    GainSchedule,
    contrast_sensitivity,
    effective_thresholds,
    frequency_grid,
    gain_matrix,
    jnd_matrix,
    luminance_params,
    median_luminance,
    orientation,
    preset,
    radial_frequency,
    read_csv,
    sigmoid,
    to_csv,
)

band = st.integers(0, 7)
gains = st.floats(0, 10)


def test_radial_frequency_values():
    assert radial_frequency(0, 0) == 0
    assert radial_frequency(1, 0) == pytest.approx(2.0627, abs=1e-4)
    assert radial_frequency(7, 7) == pytest.approx(20.419, abs=1e-3)


def test_radial_frequency_anisotropic():
    d = DisplayModel(w_x=0.02, w_y=0.04)
    assert radial_frequency(1, 0, d) == pytest.approx(1 / (16 * 0.02))
    assert radial_frequency(0, 1, d) == pytest.approx(1 / (16 * 0.04))


@pytest.mark.parametrize("k1,k2", [(-1, 0), (8, 0), (0, 8)])
def test_band_range(k1, k2):
    with pytest.raises(ValueError):
        radial_frequency(k1, k2)


def test_orientation_values():
    for k in range(1, 8):
        assert orientation(k, 0) == 0
        assert orientation(k, k) == pytest.approx(math.pi / 2, abs=1e-12)
    assert orientation(1, 2) == pytest.approx(0.9273, abs=1e-4)
    with pytest.raises(ValueError):
        orientation(0, 0)


@given(st.integers(1, 7))
def test_orientation_diagonal_clamped(k):
    assert not math.isnan(orientation(k, k))


def test_luminance_params():
    t_min, _, _ = luminance_params(87.8431)
    assert t_min == pytest.approx(0.92759, abs=1e-5)
    _, f_min, k = luminance_params(300.0)
    assert f_min == pytest.approx(6.78, abs=1e-12)
    assert k == pytest.approx(3.125, abs=1e-12)


def test_luminance_params_continuous_at_lt():
    c = CsfConstants()
    lo = luminance_params(c.l_t * (1 - 1e-9))[0]
    hi = luminance_params(c.l_t * (1 + 1e-9))[0]
    assert lo == pytest.approx(hi, rel=1e-6)


@pytest.mark.parametrize("l", [0.0, -1.0])
def test_luminance_domain(l):
    with pytest.raises(ValueError):
        luminance_params(l)


def test_median_luminance():
    assert median_luminance() == pytest.approx(87.8431, abs=1e-4)
    assert median_luminance(DisplayModel(l_max=255.0)) == pytest.approx(128.0)


def test_contrast_sensitivity_hand_chain():
    l = median_luminance()
    assert contrast_sensitivity(1, 0, l) == pytest.approx(2.9652, abs=1e-3)
    expected = 10 ** (math.log10(0.92759) + 2.86544 * (math.log10(2.0627) - math.log10(5.42195)) ** 2)
    assert contrast_sensitivity(1, 0, l) == pytest.approx(expected, rel=1e-4)


def test_contrast_sensitivity_diagonal_form():
    c = CsfConstants()
    l = median_luminance()
    t_min, f_min, k = luminance_params(l)
    for kk in range(1, 8):
        f = radial_frequency(kk, kk)
        want = t_min / c.r * 10 ** (k * (math.log10(f) - math.log10(f_min)) ** 2)
        assert contrast_sensitivity(kk, kk, l) == pytest.approx(want, rel=1e-12)


def test_contrast_sensitivity_minimum_at_f_min():
    # choose a pixel size that puts band (1, 0) exactly at f_min
    l = median_luminance()
    t_min, f_min, _ = luminance_params(l)
    d = DisplayModel(w_x=1 / (16 * f_min), w_y=1 / (16 * f_min))
    assert contrast_sensitivity(1, 0, l, d) == pytest.approx(t_min, rel=1e-12)


def test_contrast_sensitivity_rejects_dc():
    with pytest.raises(ValueError):
        contrast_sensitivity(0, 0, 80.0)


def test_jnd_corners():
    t = jnd_matrix()
    assert t[0, 0] == pytest.approx(17.31, abs=0.15)
    assert t[7, 7] == pytest.approx(34.39, abs=0.15)
    np.testing.assert_allclose(t, t.T, atol=1e-12)


def test_jnd_dc_rule():
    l = median_luminance()
    t = jnd_matrix()
    scale = 255 / (2 * (1 / 8) * 175)
    want = scale * min(contrast_sensitivity(0, 1, l), contrast_sensitivity(1, 0, l))
    assert t[0, 0] == pytest.approx(want, rel=1e-12)


def test_jnd_frozen():
    t = jnd_matrix()
    with pytest.raises(ValueError):
        t[0, 0] = 1.0


@given(
    st.floats(0, 100),
    st.floats(1, 500),
    st.floats(1, 1000),
    st.floats(0.005, 0.1),
    st.floats(0.005, 0.1),
)
def test_jnd_positive(l_min, span, m, wx, wy):
    t = jnd_matrix(DisplayModel(l_min=l_min, l_max=l_min + span, m=m, w_x=wx, w_y=wy))
    assert np.all(np.isfinite(t)) and np.all(t > 0)


@pytest.mark.parametrize(
    "kw",
    [
        {"l_max": 0.0},
        {"l_min": -1.0},
        {"l_min": 10.0, "l_max": 10.0},
        {"w_x": 0.0},
        {"w_y": -0.1},
        {"m": 0.0},
        {"l_max": math.inf},
        {"w_x": math.nan},
    ],
)
def test_display_validation(kw):
    with pytest.raises(ValueError):
        DisplayModel(**kw)


@pytest.mark.parametrize(
    "kw", [{"lambda_l": -1.0}, {"lambda_h": -0.1}, {"f_c": -1.0}, {"lambda_h": math.nan}, {"f_c": math.inf}]
)
def test_gain_validation(kw):
    with pytest.raises(ValueError):
        GainSchedule(**kw)


def test_gain_dc_value():
    lam = gain_matrix(GainSchedule(0.0, 3.0, 4.0))
    assert lam[0, 0] == pytest.approx(0.054, abs=1e-3)
    assert lam[0, 0] == pytest.approx(3 / (1 + math.e**4), rel=1e-12)


@given(st.floats(0, 10), st.floats(0, 20))
def test_gain_constant(c, fc):
    np.testing.assert_allclose(gain_matrix(GainSchedule(c, c, fc)), c, rtol=1e-12, atol=1e-12)


def test_gain_midpoint_at_cutoff():
    fc = radial_frequency(2, 3)
    lam = gain_matrix(GainSchedule(1.0, 5.0, fc))
    assert lam[2, 3] == pytest.approx(3.0, abs=1e-12)


@given(gains, gains, st.floats(0, 25))
def test_gain_monotone_and_bounded(ll, lh, fc):
    g = GainSchedule(ll, lh, fc)
    lam = gain_matrix(g).ravel()
    f = frequency_grid().ravel()
    order = np.argsort(f, kind="stable")
    steps = np.diff(lam[order])
    if lh >= ll:
        assert np.all(steps >= -1e-12)
    else:
        assert np.all(steps <= 1e-12)
    assert np.all(lam >= min(ll, lh) - 1e-12) and np.all(lam <= max(ll, lh) + 1e-12)


def test_gain_strict_bounds():
    lam = gain_matrix(GainSchedule(1.0, 2.0, 10.0))
    assert np.all(lam > 1.0) and np.all(lam < 2.0)


def test_sigmoid_tails():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_effective_thresholds():
    t = jnd_matrix()
    np.testing.assert_array_equal(effective_thresholds(GainSchedule(1.0, 1.0, 4.0)), t)
    assert not effective_thresholds(GainSchedule(0.0, 0.0, 4.0)).any()
    that = effective_thresholds(GainSchedule(0.0, 3.0, 4.0))
    assert that[7, 7] == pytest.approx(3 * t[7, 7], rel=1e-3)
    np.testing.assert_allclose(that, that.T, atol=1e-12)


def test_presets():
    assert preset("MINC") == GainSchedule(0.0, 3.0, 4.0)
    assert preset("gtos") == GainSchedule(1.0, 3.0, 4.0)
    assert preset("kth-resnet") == GainSchedule(1.0, 3.0, 4.0)
    assert all(g.f_c == 4.0 for g in PRESETS.values())
    with pytest.raises(ValueError, match="unknown preset"):
        preset("imagenet")


def test_csv_roundtrip():
    t = jnd_matrix()
    text = to_csv(t)
    rows = text.strip().split("\n")
    assert len(rows) == 8 and all(len(r.split(",")) == 8 for r in rows)
    assert all(len(v.split(".")[1]) == 4 for v in rows[0].split(","))
    np.testing.assert_allclose(read_csv(text), t, atol=5e-5)


def test_read_csv_shape():
    with pytest.raises(ValueError):
        read_csv("1,2\n3,4\n")
