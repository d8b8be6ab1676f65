import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gronstab.envelope import EnvelopeRecord
from gronstab.gronwall import (BoundCurve, SegmentODE, bound_peak, linearize_segment,
                               propagate_with_switching, theorem1_bound)

T = np.linspace(0.0, 10.0, 2001)


def equality_solution(a, b, c, d, y0, y1, t=T, slack=None):
    """High-accuracy solution of a y'' + b y' + c y + d = -slack(t)."""
    s = slack or (lambda _t: 0.0)
    sol = solve_ivp(lambda tt, y: [y[1], -(b * y[1] + c * y[0] + d + s(tt)) / a],
                    (t[0], t[-1]), [y0, y1], t_eval=t, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[0]


@pytest.mark.parametrize("a, b, c, d, kind", [
    (1.0, 3.0, 1.5, -2.0, "1.1"),       # overdamped
    (2.0, 1.0, -0.3, 0.5, "1.1"),       # negative stiffness
    (1.0, 0.8, 0.0, -0.4, "1.1-c0"),
    (1.0, 2.0, 1.0, -1.0, "1.2"),       # critically damped
    (0.5, 0.0, 0.0, 0.7, "1.3"),
])
def test_closed_forms_match_equality_ode(a, b, c, d, kind):
    seg = SegmentODE(a, b, c, d)
    curve = theorem1_bound(seg, 0.3, 0.4)
    assert curve.kind == kind
    ref = equality_solution(a, b, c, d, 0.3, 0.4)
    scale = max(1.0, np.abs(ref).max())
    assert np.abs(curve.value(T) - ref).max() / scale < 1e-8
    # rates by central differences of the exact solution
    h = 1e-6
    fd = (curve.value(T[1:-1] + h) - curve.value(T[1:-1] - h)) / (2 * h)
    assert np.allclose(curve.rate(T[1:-1]), fd, rtol=1e-5, atol=1e-5 * scale)


def test_underdamped_form_uses_critical_stiffness():
    a, b, c, d = 1.0, 1.2, 9.0, -3.0
    curve = theorem1_bound(SegmentODE(a, b, c, d), 0.2, 1.0)
    assert curve.kind == "1.2"
    ref = equality_solution(a, b, b * b / (4 * a), d, 0.2, 1.0)
    assert np.abs(curve.value(T) - ref).max() / np.abs(ref).max() < 1e-8


def _random_segment(rng):
    kind = rng.integers(4)
    a = rng.uniform(0.5, 2.0)
    if kind == 0:      # real roots
        b = rng.uniform(0.5, 5.0)
        c = rng.uniform(-3.0, b * b / (4 * a) * 0.95)
    elif kind == 1:    # complex roots
        b = rng.uniform(0.2, 3.0)
        c = b * b / (4 * a) * rng.uniform(1.5, 30.0)
    elif kind == 2:
        b, c = rng.uniform(0.2, 3.0), 0.0
    else:
        b, c = 0.0, rng.uniform(0.0, 10.0)
    return SegmentODE(a, b, c, rng.uniform(-5, 5))


def test_bound_is_sound_for_random_slack_odes():
    rng = np.random.default_rng(2024)
    t = np.linspace(0, 5, 1001)
    for _ in range(200):
        seg = _random_segment(rng)
        y0, y1 = rng.uniform(0, 2), rng.uniform(-2, 2)
        amp, w, ph = rng.uniform(0, 5), rng.uniform(0.1, 5), rng.uniform(0, 2 * math.pi)
        y = equality_solution(seg.a, seg.b, seg.c, seg.d, y0, y1, t,
                              slack=lambda tt: amp * (1 + math.sin(w * tt + ph)))
        neg = np.flatnonzero(y < 0)
        stop = neg[0] if neg.size else len(t)
        bound = theorem1_bound(seg, y0, y1).value(t[:stop])
        assert np.all(bound >= y[:stop] - 1e-9 * np.maximum(1, np.abs(y[:stop])))


def test_bound_rejects_negative_start():
    with pytest.raises(ValueError):
        theorem1_bound(SegmentODE(1, 1, 1, 1), -0.1, 0.0)
    with pytest.raises(ValueError):
        SegmentODE(0.0, 1, 1, 1)


ENV = EnvelopeRecord(0.0, math.pi, 40.0, 90.0, 0.1)


def test_chord_segments():
    s0 = linearize_segment(ENV, 0, 0.5)
    s1 = linearize_segment(ENV, 1, 0.5)
    assert (s0.a, s0.b) == (1.0, 0.5)
    assert s0.c == pytest.approx(2 * 90 / math.pi)
    assert s0.d == pytest.approx(-40.0)
    assert s1.c == pytest.approx(-2 * 90 / math.pi)
    assert s1.d == pytest.approx(2 * 90 - 40.0)
    with pytest.raises(ValueError):
        linearize_segment(ENV, 2, 0.5)


@pytest.mark.parametrize("edges", [(0.0, math.pi / 2, math.pi), (0.0, 0.7, 1.9, math.pi)])
def test_chord_dominates_envelope(edges):
    for k in range(len(edges) - 1):
        seg = linearize_segment(ENV, k, 0.5, edges)
        g = np.arange(seg.lo, seg.hi, 1e-4)
        assert np.all(-(seg.c * g + seg.d) >= ENV.gamma - ENV.ell * np.sin(g) - 1e-9)


def test_bad_edges():
    with pytest.raises(ValueError):
        linearize_segment(ENV, 0, 0.5, (0.1, math.pi))
    with pytest.raises(ValueError):
        linearize_segment(ENV, 0, 0.5, (0.0, 2.0, 1.0, math.pi))


def test_peak_matches_dense_grid():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 1.0, 1_000_001)
    for _ in range(100):
        seg = _random_segment(rng)
        curve = BoundCurve.single(seg, rng.uniform(0, 2), rng.uniform(-3, 3), 1.0)
        peak = bound_peak(curve)
        grid = curve.value(t)
        assert peak.peak >= grid.max() - 1e-12
        assert peak.peak <= grid.max() + 1e-9
        assert float(curve.value(peak.time)[0]) == pytest.approx(peak.peak, abs=1e-12)


def test_start_above_threshold_crosses_immediately():
    c = propagate_with_switching(ENV, 0.5, math.pi, 0.0)
    assert c.verdict == "crosses-pi" and c.crossing_time == 0.0
    assert bound_peak(c).time == 0.0


def test_start_below_range_rejected():
    with pytest.raises(ValueError):
        propagate_with_switching(ENV, 0.5, -0.5, 0.0)


def test_quiet_start_relaxes_to_critical_equilibrium():
    # underdamped segment: the bound settles where the critically damped surrogate does
    env = EnvelopeRecord(0.0, math.pi, 10.0, 90.0, 0.0)
    seg = linearize_segment(env, 0, 8.0)
    assert seg.case == "1.2"
    g_eq = -seg.d / seg.c
    c = propagate_with_switching(env, 8.0, g_eq, 0.0, horizon=6.0)
    assert c.verdict == "bounded-below-pi" and not c.switches
    vals = c.value(np.linspace(0, 6, 200))
    assert np.all(np.diff(vals) >= -1e-12)
    assert vals[-1] == pytest.approx(-4 * seg.a * seg.d / seg.b ** 2, abs=1e-6)


def test_fast_start_crosses():
    c = propagate_with_switching(ENV, 0.5, 1.0, 30.0)
    assert c.verdict == "crosses-pi"
    assert c.crossing_time > 0
    assert c.switches and c.switches[0].to_segment == 1
    assert c.switches[0].rate == 30.0


def test_switch_resets_rate_and_lands_on_boundary():
    c = propagate_with_switching(ENV, 2.0, 1.0, 3.0, horizon=5.0)
    sw = c.switches[0]
    assert sw.boundary == pytest.approx(math.pi / 2)
    before = c.pieces[0].value(sw.time)
    after = c.pieces[1].value(sw.time)
    assert float(before) == pytest.approx(math.pi / 2, abs=1e-6)
    assert float(after) == pytest.approx(math.pi / 2, abs=1e-12)
    assert float(c.pieces[1].rate(sw.time)) == pytest.approx(3.0)


def test_comparison_solution_is_dominated():
    rng = np.random.default_rng(99)
    for _ in range(30):
        ell = rng.uniform(5, 120)
        env = EnvelopeRecord(0.0, math.pi, rng.uniform(0.05, 0.95) * ell, ell, rng.uniform(0, 0.3))
        lam = rng.uniform(0.1, 10)
        g0 = rng.uniform(math.asin(env.gamma / ell), math.pi / 2)
        r0 = rng.uniform(0, 12)
        curve = propagate_with_switching(env, lam, g0 - env.phi, r0)
        top = lambda t, y: y[1]
        top.terminal, top.direction = True, -1
        sol = solve_ivp(lambda t, y: [y[1], env.gamma - ell * math.sin(y[0]) - lam * y[1]],
                        (0, 5), [g0, r0], events=top, dense_output=True, rtol=1e-11, atol=1e-12)
        t = np.linspace(0, min(sol.t[-1], curve.t_end), 2001)
        assert np.all(curve.value(t) >= sol.sol(t)[0] - 1e-6)


def test_as_dict_lists_segments():
    d = propagate_with_switching(ENV, 2.0, 1.0, 3.0).as_dict()
    assert d["segments"][0]["segment"] == 0
    assert d["switches"][0]["to_segment"] == 1
