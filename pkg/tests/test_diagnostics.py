import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sediment_lab.diagnostics import (CONTRACTION_BOUNDS, DiagnosticsRecord, band_ratio, fit_decay, fit_power,
                                      modulated_energy, modulated_energy_p, singular_sum_report,
                                      velocity_force_bounds_check)
from sediment_lab.macroref import cell_centers


def test_record_append_rules_and_csv():
    rec = DiagnosticsRecord()
    rec.append(0.0, a=1.0)
    rec.append(0.5, a=2.0, b=3.0)
    with pytest.raises(ValueError):
        rec.append(0.4, a=1.0)
    with pytest.raises(FloatingPointError):
        rec.append(1.0, a=math.nan)
    text = rec.to_csv(["hello"], order=["t", "b", "a"])
    assert text.splitlines() == ["# hello", "t,b,a", "0.0,,1.0", "0.5,3.0,2.0"]
    assert np.isnan(rec.series("b")[0])
    with pytest.raises(KeyError):
        rec.series("zzz")
    assert "records: 2" in rec.summary()


def test_modulated_energy():
    V = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    assert modulated_energy(V, np.zeros_like(V)) == pytest.approx(5 / 4)
    assert modulated_energy_p(V, np.zeros_like(V), 2.0) == pytest.approx(5 / 4)
    with pytest.raises(ValueError):
        modulated_energy(V, np.zeros((3, 3)))


@given(st.floats(0.1, 10), st.floats(0.5, 5))
def test_fit_decay_recovers_exact_exponential(rate, amp):
    t = np.linspace(0, 1, 20)
    fit = fit_decay(t, amp * np.exp(-rate * t))
    assert fit.params["rate"] == pytest.approx(rate, rel=1e-9)
    assert fit.params["amplitude"] == pytest.approx(amp, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_decay_window_and_errors():
    t = np.linspace(0, 2, 41)
    y = np.where(t < 1, np.exp(-3 * t), np.exp(-3.0))
    assert fit_decay(t, y, window=(0, 0.9)).params["rate"] == pytest.approx(3)
    with pytest.raises(ValueError):
        fit_decay(t[:3], y[:3])
    with pytest.raises(ValueError):
        fit_decay(t, y - 1)


@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_fit_power_recovers_slope(slope, pref):
    x = np.array([1.0, 2.0, 5.0, 10.0])
    fit = fit_power(x, pref * x**slope)
    assert fit.params["slope"] == pytest.approx(slope, abs=1e-9)


def test_band_ratio():
    assert band_ratio([1.0, 2.0, 4.0]) == 4.0
    with pytest.raises(ValueError):
        band_ratio([1.0, 0.0])


def test_singular_sum_report_on_a_lattice():
    X = cell_centers(np.zeros(3), np.full(3, 5.0), (5, 5, 5))
    rep = singular_sum_report(X, n_triples=50, seed=0)
    assert rep["contraction_ok"]
    for k, bound in CONTRACTION_BOUNDS.items():
        assert 0 < rep[f"contraction_{k}"] <= bound
    # nearest neighbours at distance 1: S6 d^6 is at least the 3 face neighbours of a corner
    assert rep["S6_dmin6"] >= 3
    with pytest.raises(ValueError):
        singular_sum_report(X[:2])


def test_velocity_force_bounds_check():
    rec = DiagnosticsRecord()
    for t in np.linspace(0, 1, 5):
        rec.append(t, NF_inf=1.0, V_inf=1.0 + math.exp(-10 * t))
    out = velocity_force_bounds_check(rec, 1.0, 10.0)
    assert not out["blow_up"] and out["constant"] >= 1.0


def test_modulated_energies_vanish_on_equal_fields_and_hand_value():
    V = np.arange(12.0).reshape(4, 3)
    assert modulated_energy(V, V) == 0.0 and modulated_energy_p(V, V, 3.0) == 0.0
    assert modulated_energy_p(np.array([[1.0, 0, 0]]), np.zeros((1, 3)), 3.0) == pytest.approx(1 / 3)


def test_fit_decay_constant_and_floored_series():
    t = np.linspace(0, 2, 41)
    assert fit_decay(t, np.full_like(t, 0.7)).params["rate"] == pytest.approx(0.0, abs=1e-12)
    assert fit_decay(t, np.exp(-3 * t)).params["rate"] == pytest.approx(3.0, abs=1e-6)
    floored = np.exp(-3 * t) + 0.01
    assert fit_decay(t, floored, window=(0, 0.5)).params["rate"] == pytest.approx(3.0, rel=0.05)


def test_singular_sum_report_small_lattice_and_scale_invariance():
    X = cell_centers(np.zeros(3), np.full(3, 2.0), (2, 2, 2))
    rep = singular_sum_report(X, n_triples=20, seed=1)
    scaled = singular_sum_report(3.7 * X, n_triples=20, seed=1)
    for k, v in rep.items():
        if isinstance(v, bool):
            continue
        assert math.isfinite(v)
        assert scaled[k] == pytest.approx(v, rel=1e-12)


def test_singular_sum_report_stable_across_lattice_sizes():
    reports = [singular_sum_report(cell_centers(np.zeros(3), np.full(3, float(n)), (n,) * 3), n_triples=40, seed=0)
               for n in range(3, 9)]
    for key in ("S3_dmin3_over_logN", "S4_dmin4", "S6_dmin6"):
        assert band_ratio([r[key] for r in reports]) <= 4.0
