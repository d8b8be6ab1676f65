import dataclasses
import itertools
import math

import numpy as np
import pytest

from gronstab import assess
from gronstab.assess import (NoMarginError, Study, apply_parameter, certify, estimate_cct,
                             margin_index, sweep)
from gronstab.envelope import EnvelopeInvalidError, EnvelopeRecord
from gronstab.netmodel import parse_case

from test_netmodel import load_case_text


def test_instant_clearing_is_quiet(study_low):
    a = certify(study_low, 0.0)
    eq = np.ptp(study_low.init.theta0)
    assert a.d0 == pytest.approx(eq, abs=1e-12)
    assert a.d0_dot == 0.0
    assert a.analytic_stable and a.numerical_stable
    assert a.numerical_peak == pytest.approx(eq, abs=1e-6)
    assert a.bound_peak < math.pi


def test_light_damping_scenario(study_low):
    a = certify(study_low, 0.2)
    assert a.analytic_stable and a.numerical_stable
    assert a.bound.switches
    assert a.first_swing_switches() == 1
    assert a.numerical_peak <= a.bound_peak
    assert a.freq_spread_end is not None and math.isfinite(a.freq_spread_end)


def test_heavy_damping_scenario(study_high):
    a = certify(study_high, 0.6)
    assert a.analytic_stable and a.numerical_stable
    assert a.first_swing_switches() == 0
    assert a.numerical_peak <= a.bound_peak


def test_dominance_invariant_over_clearing_times(study_low):
    for tc in (0.05, 0.1, 0.15, 0.25):
        a = certify(study_low, tc)
        if a.analytic_stable:
            assert a.numerical_stable
            assert a.numerical_peak <= a.bound_peak + 1e-9


def test_assessment_dict(study_low):
    d = certify(study_low, 0.2).as_dict(study_low)
    assert d["analytic"]["verdict"] == "bounded-below-pi"
    assert d["mu"] == pytest.approx(margin_index(study_low.env).mu)
    times = d["analytic"]["switch_times_since_fault"]
    assert times[0] == pytest.approx(d["analytic"]["switch_times_after_clearing"][0] + 0.2)


def test_long_fault_crosses(study_low):
    a = certify(study_low, 0.5)
    assert a.analytic_verdict == "crosses-pi"
    assert a.numerical_verdict == "crosses-pi"


def test_no_margin(study_low):
    with pytest.raises(NoMarginError):
        estimate_cct(study_low, "analytic", bracket=(0.5, 1.0))
    with pytest.raises(ValueError):
        estimate_cct(study_low, "guess")


def test_dummy_bus_fault_hits_cap():
    text = load_case_text().replace("9     pq     1.000  0.00    0.00",
                                    "9     pq     1.000  0.00    0.00\n10    pq     1.000  0.00    0.00")
    study = Study.prepare(parse_case(text), 10, lam=0.5)
    for mode in ("analytic", "numerical"):
        res = estimate_cct(study, mode)
        assert res.capped and res.cct == 2.0
        assert res.as_dict()["note"] == "no instability found in bracket"


def test_bisection_tolerance_and_log(study_high):
    res = estimate_cct(study_high, "analytic", tol=0.02)
    stable = [t for t, v in res.log if v == "bounded-below-pi"]
    unstable = [t for t, v in res.log if v == "crosses-pi"]
    assert res.cct == max(stable)
    assert min(u for u in unstable if u > res.cct) - res.cct <= 0.02
    assert not res.non_monotone


def test_non_monotone_verdicts_are_reported(monkeypatch, study_low):
    # stable everywhere except an unstable pocket low in the bracket
    def fake(study, t, mode):
        return "crosses-pi" if 0.3 < t < 0.5 or t > 1.2 else "bounded-below-pi"
    monkeypatch.setattr(assess, "_verdict", fake)
    res = estimate_cct(study_low, "numerical")
    assert res.non_monotone
    lo, hi = res.non_monotone[0]
    assert lo < hi


def test_margin_index():
    assert margin_index(EnvelopeRecord(0, math.pi, 5.0, 0.0, 0.0)).mu == 0.0
    assert margin_index(EnvelopeRecord(0, math.pi, 4.0, 10.0, 0.2)).mu == pytest.approx(2.5)
    with pytest.raises(EnvelopeInvalidError):
        margin_index(EnvelopeRecord(0, math.pi, 0.0, 10.0, 0.2))


def test_margin_index_ignores_machine_order(net9, study_low):
    mu = margin_index(study_low.env).mu
    assert mu > 0
    for perm in itertools.permutations(range(3)):
        gens = tuple(net9.generators[k] for k in perm)
        other = Study.prepare(dataclasses.replace(net9, generators=gens), 1, lam=0.5)
        assert margin_index(other.env).mu == pytest.approx(mu, rel=1e-7)


def test_margin_index_grows_as_line_shortens(net9):
    mus = [margin_index(Study.prepare(net9.with_branch_reactance(5, 7, x), 1, lam=0.5).env).mu
           for x in (0.16, 0.12, 0.08)]
    assert mus[0] < mus[1] < mus[2]


def test_apply_parameter(net9):
    changed, lam = apply_parameter(net9, "lambda", 3.0)
    assert lam == 3.0 and changed.generators[1].d == pytest.approx(3.0 * 12.8)
    changed, lam = apply_parameter(net9, "branch:5-7:x", 0.1)
    assert lam is None
    with pytest.raises(ValueError):
        apply_parameter(net9, "branch:5-7:r", 0.1)


def test_sweep_empty_and_errors(net9):
    assert sweep(net9, 1, "lambda", []) == []
    rows = sweep(net9, 1, "branch:1-9:x", [0.1])
    assert rows[0].error and "KeyError" in rows[0].error
    assert rows[0].as_row()[-1] == rows[0].error
