import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ulpls_sim.decks import DeckParams, generate_dcvs, generate_ulpls
from ulpls_sim.engine import Waveform, transient
from ulpls_sim.measure import (REPORT_HEADER, BracketError, FunctionalPredicate,
                               MeasurementError, avg_power, bisect_min_functional,
                               crossing_times, is_functional, make_report, measure_circuit,
                               measure_waveform, min_vin_search, prop_delay, stimulus_of,
                               with_vin, write_report_csv)
from ulpls_sim.netlist import load_circuit


def _square(t, period=10e-6, delay=0.0, edge=10e-9, hi=1.0):
    """Trapezoidal square wave sampled at ``t``."""
    ph = np.mod(t - delay, period)
    up = np.clip(ph / edge, 0, 1)
    down = np.clip((ph - period / 2) / edge, 0, 1)
    return hi * np.where(t < delay, 0.0, up - down)


def test_crossing_of_ramp():
    assert crossing_times([0.0, 1.0], [0.0, 1.0], 0.5, "rising") == pytest.approx([0.5])
    assert len(crossing_times([0.0, 1.0], [0.0, 1.0], 0.5, "falling")) == 0


def test_constant_series_has_no_crossings():
    assert len(crossing_times(np.arange(5.0), np.full(5, 0.3), 0.3)) == 0
    assert len(crossing_times(np.arange(5.0), np.full(5, 0.1), 0.3)) == 0


def test_touching_is_not_crossing():
    t = np.arange(5.0)
    assert len(crossing_times(t, [0, 0.5, 0, 0.5, 0], 0.5, "rising")) == 0
    assert len(crossing_times(t, [1, 0.5, 1, 0.5, 1], 0.5, "falling")) == 0


def test_crossing_through_plateau_is_placed_at_first_level_sample():
    t = np.arange(5.0)
    assert crossing_times(t, [0, 0.5, 0.5, 1, 1], 0.5, "rising") == pytest.approx([1.0])


def test_crossings_are_interpolated_and_increasing():
    t = np.linspace(0, 40e-6, 4001)
    v = _square(t)
    r = crossing_times(t, v, 0.5, "rising")
    f = crossing_times(t, v, 0.5, "falling")
    assert r == pytest.approx([5e-9, 10e-6 + 5e-9, 20e-6 + 5e-9, 30e-6 + 5e-9], abs=1e-15)
    assert np.all(np.diff(r) > 0) and len(f) == 4


def test_crossing_needs_two_samples():
    with pytest.raises(ValueError):
        crossing_times([0.0], [1.0], 0.5)


def test_delay_of_pure_shift():
    t = np.arange(0, 40e-6, 1e-9)
    v_in = _square(t, hi=0.1)
    v_out = _square(t, delay=100e-9, hi=0.8)
    tdr, tdf, tdm = prop_delay(t, v_in, v_out, 0.05, 0.4)
    assert (tdr, tdf, tdm) == pytest.approx((100e-9, 100e-9, 100e-9), rel=1e-6)


def test_delay_against_itself_is_zero():
    t = np.arange(0, 40e-6, 1e-9)
    v = _square(t)
    assert prop_delay(t, v, v, 0.5, 0.5) == (0.0, 0.0, 0.0)


def test_delay_reports_worst_edge():
    t = np.arange(0, 30e-6, 1e-9)
    v_in = _square(t)
    v_out = np.where(t < 10e-6, _square(t, delay=50e-9), _square(t, delay=80e-9))
    tdr, tdf, tdm = prop_delay(t, v_in, v_out, 0.5, 0.5)
    assert tdr == pytest.approx(80e-9, rel=1e-6) and tdm == tdr


def test_missing_output_edge_is_an_error():
    t = np.arange(0, 30e-6, 1e-9)
    v_in = _square(t)
    v_out = np.where(t < 12e-6, _square(t, delay=50e-9), 1.0)  # stuck high
    with pytest.raises(MeasurementError, match="no rising output edge"):
        prop_delay(t, v_in, v_out, 0.5, 0.5)


def _dc_waveform(current, volts=0.8, n=11):
    t = np.linspace(0, 10e-6, n)
    return Waveform(times=t, node_names=("a",), node_voltages=np.full((n, 1), volts),
                    source_names=("Vddh",), source_currents=np.full((n, 1), current))


def test_avg_power_constant():
    w = _dc_waveform(10e-9)
    assert avg_power(w, [("vddh", 0.8)], (0.0, 10e-6)) == pytest.approx(8e-9, rel=1e-12)
    assert avg_power(w, [("Vddh", 0.8)], (1.3e-6, 7.7e-6)) == pytest.approx(8e-9, rel=1e-12)


def test_avg_power_errors():
    w = _dc_waveform(10e-9)
    with pytest.raises(KeyError):
        avg_power(w, [("vddx", 0.8)], (0.0, 10e-6))
    with pytest.raises(ValueError):
        avg_power(w, [("vddh", 0.8)], (5e-6, 5e-6))


def _charging_run():
    c = load_circuit("inv\n.model n22 nmos (vth0=0.503)\n.model p22 pmos (vth0=0.460 kp=3.98e-5)\n"
                     "Vddh vdd 0 DC 0.8\nVin in 0 PULSE(0 0.8 0 10n 10n 4.99u 10u)\n"
                     "MP out in vdd vdd p22 W=500n L=40n\nMN out in 0 0 n22 W=200n L=40n\n"
                     "CL out 0 200f\n")
    return transient(c, 1e-9, 40e-6)


def test_charging_a_load_costs_cv2_per_cycle():
    # energy bookkeeping oracle: the supply hands out C*V^2 per charge/discharge cycle,
    # plus whatever the inverter burns on its own
    bound = 200e-15 * 0.8 ** 2 / 10e-6
    assert bound == pytest.approx(12.8e-9, rel=1e-12)
    p = avg_power(_charging_run(), [("vddh", 0.8)], (10e-6, 40e-6))
    assert p >= bound
    assert p == pytest.approx(bound, rel=0.01)


def test_avg_power_is_stable_under_resampling():
    w = _charging_run()
    t2 = np.linspace(0, w.times[-1], 2 * len(w.times) - 1)
    dense = Waveform(t2, w.node_names, np.column_stack([np.interp(t2, w.times, c)
                                                       for c in w.node_voltages.T]),
                     w.source_names, np.column_stack([np.interp(t2, w.times, c)
                                                     for c in w.source_currents.T]))
    a = avg_power(w, [("vddh", 0.8)], (10e-6, 40e-6))
    b = avg_power(dense, [("vddh", 0.8)], (10e-6, 40e-6))
    assert b == pytest.approx(a, rel=5e-3)


@given(st.floats(0, 1e-6), st.floats(0, 1e-6), st.floats(0, 1e-6))
def test_report_invariants(tdr, tdf, p):
    r = make_report(0.8, 0.0, tdr, tdf, p, True)
    assert r.t_d_max == max(tdr, tdf)
    assert r.pdp == r.p_avg * r.t_d_max


def test_report_with_missing_delay():
    r = make_report(0.8, 0.0, math.nan, 1e-8, 1e-8, False)
    assert math.isnan(r.t_d_max) and math.isnan(r.pdp)


@pytest.mark.parametrize("kwargs", [dict(swing_frac_low=0.9, swing_frac_high=0.1),
                                    dict(swing_frac_low=0.0), dict(swing_frac_high=1.0),
                                    dict(min_cycles=0)])
def test_predicate_invariants(kwargs):
    with pytest.raises(ValueError):
        FunctionalPredicate(**kwargs)


@pytest.fixture(scope="module")
def ulpls_run():
    c = load_circuit(generate_ulpls(DeckParams(vin_amplitude=0.4)))
    return c, transient(c)


def test_ulpls_output_rises_once_per_period(ulpls_run):
    c, _ = ulpls_run
    w = transient(c, 1e-9, 20e-6)
    assert len(crossing_times(w.times, w.v("out"), 0.4, "rising")) == 2


def test_ulpls_report(ulpls_run):
    c, w = ulpls_run
    r = measure_waveform(w, c)
    assert r.functional and r.n_cycles == 3
    assert r.v_out_high >= 0.99 * 0.8 and r.v_out_low <= 0.01 * 0.8
    assert 1e-9 < r.t_d_max < 1e-6  # order of magnitude only; the model is substituted
    assert r.pdp == r.p_avg * r.t_d_max
    assert (r.vin, r.vddl, r.vddh, r.temp) == (0.4, 0.4, 0.8, 27.0)


def test_predicate_rejects_too_few_cycles(ulpls_run):
    c, w = ulpls_run
    st_ = stimulus_of(c)
    assert is_functional(w, st_)
    assert not is_functional(w, st_, FunctionalPredicate(min_cycles=4))


def test_report_csv(tmp_path, ulpls_run):
    c, w = ulpls_run
    r = measure_waveform(w, c)
    path = tmp_path / "r.csv"
    write_report_csv(path, [r, r])
    lines = path.read_text().splitlines()
    assert lines[0] == REPORT_HEADER
    assert len(lines) == 3 and lines[1].endswith(",1")
    assert float(lines[1].split(",")[10]) == pytest.approx(r.pdp, rel=1e-8)


def test_dead_output_is_non_functional_with_nan_delays():
    c = load_circuit(generate_dcvs(DeckParams(vin_amplitude=0.1)))
    r = measure_circuit(c)
    assert not r.functional
    assert math.isnan(r.t_d_max)


def test_with_vin_only_touches_the_amplitude(ulpls_run):
    c, _ = ulpls_run
    c2 = with_vin(c, 0.123)
    assert c2.device("vin").pulse.v2 == 0.123
    assert c2.device("vin").pulse.t_period == c.device("vin").pulse.t_period
    assert stimulus_of(c2).vin == 0.123


def test_bisection_limit():
    v_lo, tol = 0.02, 5e-3
    got = bisect_min_functional(lambda v: v > v_lo, v_lo, 0.4, tol)
    assert v_lo < got <= v_lo + tol


def test_bisection_bracket_errors():
    with pytest.raises(BracketError, match="lower"):
        bisect_min_functional(lambda v: True, 0.02, 0.4)
    with pytest.raises(BracketError, match="upper"):
        bisect_min_functional(lambda v: False, 0.02, 0.4)


@given(st.floats(0.03, 0.39), st.floats(0.5, 0.95), st.floats(0.0, 0.04))
def test_stricter_predicate_never_lowers_minimum(knee, frac, extra):
    # synthetic detector: swing fraction grows smoothly with the input amplitude
    def swing(v):
        return 1.0 / (1.0 + math.exp(-(v - knee) / 0.01))

    loose = bisect_min_functional(lambda v: swing(v) >= frac, 0.0, 1.0, 1e-3)
    strict = bisect_min_functional(lambda v: swing(v) >= frac + extra, 0.0, 1.0, 1e-3)
    assert strict >= loose - 1e-3


def test_min_vin_search_on_ulpls_and_dcvs():
    ulpls = load_circuit(generate_ulpls(DeckParams(vin_amplitude=0.4)))
    dcvs = load_circuit(generate_dcvs(DeckParams(vin_amplitude=0.4)))
    v_u = min_vin_search(ulpls, v_lo=0.02, v_hi=0.4)
    v_d = min_vin_search(dcvs, v_lo=0.02, v_hi=0.4)
    assert v_u <= 0.15
    assert v_d > 3 * v_u
    strict = min_vin_search(ulpls, FunctionalPredicate(swing_frac_high=0.99), 0.02, 0.4)
    assert strict >= v_u


def test_min_vin_search_accepts_a_builder():
    def build(v):
        return load_circuit(generate_ulpls(DeckParams(vin_amplitude=v)))
    with pytest.raises(BracketError):
        min_vin_search(build, v_lo=0.2, v_hi=0.4)
