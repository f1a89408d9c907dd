import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulpls_sim.measure import make_report, measure_circuit
from ulpls_sim.variation import (HIST_BINS, WORKERS_ENV, CampaignError, ToleranceSpec, Variant,
                                 apply_multipliers, corners, default_workers, mc_multipliers,
                                 pdp_histogram, run_campaign, sample_mc, temp_sweep,
                                 worst_case_sizing)

NAMES = ["mn1", "mn2", "mp1"]


def test_zero_tolerance_gives_unit_multipliers():
    m = mc_multipliers(NAMES, ToleranceSpec(0.0, 0.0), seed=3, k=5)
    assert all(v == 1.0 for v in m.values())
    assert set(m) == {"vddh", "vddl", "w_mn1", "w_mn2", "w_mp1"}


@given(st.integers(0, 2**31), st.integers(0, 10**6))
def test_draws_are_reproducible(seed, k):
    tol = ToleranceSpec()
    assert mc_multipliers(NAMES, tol, seed, k) == mc_multipliers(NAMES, tol, seed, k)


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(0.0, 0.49), st.floats(0.0, 0.49))
def test_draws_are_clipped(seed, s_tol, w_tol):
    tol = ToleranceSpec(s_tol, w_tol)
    for k in range(20):
        m = mc_multipliers(NAMES, tol, seed, k)
        assert all(abs(m[s] - 1) <= s_tol + 1e-15 for s in ("vddh", "vddl"))
        assert all(abs(m[f"w_{n}"] - 1) <= w_tol + 1e-15 for n in NAMES)


def test_variant_does_not_depend_on_sample_count(ulpls_circuit):
    tol = ToleranceSpec()
    few = sample_mc(ulpls_circuit, tol, 3, seed=42)
    many = sample_mc(ulpls_circuit, tol, 7, seed=42)
    for a, b in zip(few, many):
        assert a.multipliers == b.multipliers and a.circuit == b.circuit
    assert mc_multipliers([m.name.lower() for m in ulpls_circuit.mosfets], tol, 42, 2) == \
        few[2].multipliers


def test_scope_leaves_other_draws_untouched():
    full = mc_multipliers(NAMES, ToleranceSpec(), 9, 4)
    scoped = mc_multipliers(NAMES, ToleranceSpec(scoped_devices=("MN1",)), 9, 4)
    assert scoped["w_mn1"] == full["w_mn1"] != 1.0
    assert scoped["w_mn2"] == scoped["w_mp1"] == 1.0
    assert (scoped["vddh"], scoped["vddl"]) == (full["vddh"], full["vddl"])


def test_spread_matches_three_sigma_reading():
    tol = ToleranceSpec(supply_tol=0.10, size_tol=0.04)
    draws = [mc_multipliers(NAMES, tol, 42, k) for k in range(10_000)]
    vddh = np.array([d["vddh"] for d in draws])
    w = np.array([d["w_mn1"] for d in draws])
    assert vddh.std() == pytest.approx(0.10 / 3, rel=0.05)
    assert w.std() == pytest.approx(0.04 / 3, rel=0.05)
    assert abs(vddh.mean() - 1) < 3 * 0.0333 / math.sqrt(len(vddh)) * 2


def test_threshold_hook():
    tol = ToleranceSpec(vth_tol=0.05)
    m = mc_multipliers(NAMES, tol, 1, 0)
    assert {f"vth_{n}" for n in NAMES} <= set(m)
    # the width draws come first and are unchanged by the extra threshold draws
    base = mc_multipliers(NAMES, ToleranceSpec(), 1, 0)
    assert all(m[k] == base[k] for k in base)


def test_apply_multipliers(ulpls_circuit):
    c = apply_multipliers(ulpls_circuit, {"vddh": 0.9, "w_mn1": 1.04, "vth_mn3": 1.1})
    assert c.device("vddh").dc == pytest.approx(0.72)
    assert c.device("vddl").dc == ulpls_circuit.device("vddl").dc
    assert c.device("mn1").w == pytest.approx(208e-9)
    mn3 = c.device("mn3")
    assert c.models[mn3.model].vth0 == pytest.approx(0.503 * 1.1)
    assert c.models["n22"].vth0 == 0.503  # other devices keep the shared card
    assert apply_multipliers(ulpls_circuit, {}) == ulpls_circuit


def test_supply_corners(ulpls_circuit):
    vs = corners(ulpls_circuit, ToleranceSpec())
    assert len(vs) == 4
    assert [v.label for v in vs] == ["LL", "LH", "HL", "HH"]
    first = vs[0].circuit
    assert (first.device("vddh").dc, first.device("vddl").dc) == pytest.approx((0.72, 0.36))
    vddh = [v.circuit.device("vddh").dc for v in vs]
    assert min(vddh) == pytest.approx(0.72) and max(vddh) == pytest.approx(0.88)


def test_supply_and_size_corners(ulpls_circuit):
    vs = corners(ulpls_circuit, ToleranceSpec(), "supply_and_size")
    assert len(vs) == 8 and vs[1].label == "LLH"
    assert vs[0].circuit.device("mn1").w == pytest.approx(192e-9)
    assert vs[1].circuit.device("mp8").w == pytest.approx(520e-9)
    with pytest.raises(ValueError):
        corners(ulpls_circuit, ToleranceSpec(), "everything")


def test_worst_case_sizing(ulpls_circuit):
    vs = worst_case_sizing(ulpls_circuit)
    assert len(vs) == 4
    assert {round(v.circuit.device("mn1").w * 1e9, 6) for v in vs} == {192.0, 208.0}
    assert {round(v.circuit.device("mn2").w * 1e9, 6) for v in vs} == {960.0, 1040.0}
    assert vs[0].label == "MN1- MN2-" and vs[3].label == "MN1+ MN2+"
    assert all(v.circuit.device("mp1").w == 500e-9 for v in vs)
    with pytest.raises(KeyError):
        worst_case_sizing(ulpls_circuit, ("MN9",))


@pytest.mark.parametrize("kwargs", [dict(supply_tol=-0.1), dict(size_tol=0.5),
                                    dict(vth_tol=1.0)])
def test_tolerance_invariants(kwargs):
    with pytest.raises(ValueError):
        ToleranceSpec(**kwargs)


def test_histogram_has_fixed_bins():
    edges, counts = pdp_histogram(np.linspace(1e-15, 2e-15, 57))
    assert len(edges) == HIST_BINS + 1 and counts.sum() == 57
    edges, counts = pdp_histogram([3e-15] * 4)
    assert counts.sum() == 4 and counts[-1] == 4
    _, counts = pdp_histogram([math.nan, 1e-15, 2e-15])
    assert counts.sum() == 2


def _fake(c):
    mult = c.device("vddh").dc / 0.8
    return make_report(0.8, 0.0, 1e-7 * mult, 1e-7, 1e-8 * mult, True)


def test_campaign_records_failures_and_keeps_order(ulpls_circuit):
    vs = sample_mc(ulpls_circuit, ToleranceSpec(), 6, seed=1)

    def flaky(c):
        if c == vs[2].circuit:
            raise ValueError("boom")
        return _fake(c)

    res = run_campaign(vs, flaky, workers=3)
    assert res.failures == ((2, "ValueError: boom"),)
    assert res.reports[2] is None and res.n_functional == 5
    assert res.functional_fraction == pytest.approx(5 / 6)
    for v, r in zip(vs, res.reports):
        if r is not None:
            assert r == _fake(v.circuit)
    assert res.mc_csv().splitlines()[3].endswith("nan,nan,nan,0")


def test_campaign_with_every_variant_failing(ulpls_circuit):
    vs = corners(ulpls_circuit, ToleranceSpec())
    def broken(c):
        raise ValueError("nope")
    with pytest.raises(CampaignError, match="all 4"):
        run_campaign(vs, broken)
    with pytest.raises(ValueError):
        run_campaign([], broken)


def test_campaign_csv_layout(ulpls_circuit):
    vs = sample_mc(ulpls_circuit, ToleranceSpec(), 3, seed=42)
    res = run_campaign(vs, _fake, workers=1)
    head, *rows = res.mc_csv().splitlines()
    assert head.startswith("variant,seed,vddh_mult,vddl_mult,w_mn1_mult,w_mn2_mult")
    assert head.endswith("pavg,tdmax,pdp,functional")
    assert len(rows) == 3 and rows[0].startswith("0,42,")
    assert len(res.hist_csv().splitlines()) == HIST_BINS + 1


def test_default_workers(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert default_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "lots")
    assert default_workers() == 1


def test_zero_tolerance_campaign_equals_nominal(ulpls_circuit):
    nominal = measure_circuit(ulpls_circuit)
    res = run_campaign(sample_mc(ulpls_circuit, ToleranceSpec(0.0, 0.0), 2, seed=5))
    assert res.reports[0] == nominal and res.reports[1] == nominal


def test_threaded_campaign_is_identical(ulpls_circuit):
    vs = sample_mc(ulpls_circuit, ToleranceSpec(), 4, seed=42)
    a = run_campaign(vs, workers=1)
    b = run_campaign(vs, workers=2)
    assert a.mc_csv() == b.mc_csv() and a.hist_csv() == b.hist_csv()
    assert a.n_functional == 4


def test_temp_sweep_matches_plain_run(ulpls_circuit):
    res = temp_sweep(ulpls_circuit, [27])
    assert res.reports[0] == measure_circuit(ulpls_circuit.with_temp(27))
    assert res.variants[0].label == "27C"
    with pytest.raises(ValueError):
        temp_sweep(ulpls_circuit, [200])


def test_variant_equality_ignores_circuit(ulpls_circuit):
    a = Variant(0, {"vddh": 1.0}, ulpls_circuit)
    b = Variant(0, {"vddh": 1.0}, ulpls_circuit.with_temp(80))
    assert a == b
