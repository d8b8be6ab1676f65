import math

import numpy as np
import pytest

from gronstab.dynamics import (FAULT_ON, POST_FAULT, FaultScenario, NonFiniteStateError, diameter,
                               faulted_reduction, first_swing_end, integrate_swing,
                               numerically_unstable, simulate_fault, write_trajectory_csv)
from gronstab.netmodel import Generator, derive_coefficients


def _two_machine(lam=0.0, b=5.0, p=0.5, m=10.0):
    gens = [Generator(1, p, m, lam * m, 0.1), Generator(2, -p, m, lam * m, 0.1)]
    y = np.array([[-1j * b, 1j * b], [1j * b, -1j * b]])
    return derive_coefficients(y, [1.0, 1.0], gens, 2 * math.pi * 60)


def test_equilibrium_is_a_fixed_point(study_low):
    th0 = study_low.init.theta0
    traj = integrate_swing(study_low.pre, th0, np.zeros(3), (0.0, 5.0))
    d = diameter(traj).d
    assert np.ptp(d) < 1e-6


def test_small_signal_frequency_of_two_machines():
    red = _two_machine()
    a = red.a[0, 1]
    delta_star = math.asin((red.omega[0] - red.omega[1]) / (2 * a))
    wn = math.sqrt(2 * a * math.cos(delta_star))
    theta0 = np.array([delta_star / 2 + 1e-3, -delta_star / 2])
    traj = integrate_swing(red, theta0, np.zeros(2), (0.0, 10 * 2 * math.pi / wn))
    x = traj.theta[:, 0] - traj.theta[:, 1] - delta_star
    up = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    # interpolate crossing times
    tc = traj.t[up] - x[up] * (traj.t[up + 1] - traj.t[up]) / (x[up + 1] - x[up])
    period = np.mean(np.diff(tc))
    assert 2 * math.pi / period == pytest.approx(wn, rel=0.02)


def test_rk4_is_fourth_order():
    red = _two_machine(lam=0.3)
    theta0 = np.array([0.6, -0.4])
    ref = integrate_swing(red, theta0, np.zeros(2), (0, 1.0), 5e-5).theta[-1]
    e1 = np.abs(integrate_swing(red, theta0, np.zeros(2), (0, 1.0), 0.005).theta[-1] - ref).max()
    e2 = np.abs(integrate_swing(red, theta0, np.zeros(2), (0, 1.0), 0.0025).theta[-1] - ref).max()
    assert 12 < e1 / e2 < 20


def test_lossless_undamped_motion_is_time_reversible():
    red = _two_machine()
    theta0 = np.array([0.5, -0.2])
    omega0 = np.array([1.0, -0.5])
    fwd = integrate_swing(red, theta0, omega0, (0.0, 2.0), 1e-3)
    back = integrate_swing(red, fwd.theta[-1], -fwd.omega[-1], (0.0, 2.0), 1e-3)
    assert np.allclose(back.theta[-1], theta0, atol=1e-8)
    assert np.allclose(-back.omega[-1], omega0, atol=1e-8)


def test_step_halving_changes_first_swing_peak_little(study_low):
    def peak(h):
        traj = simulate_fault(study_low.pre, study_low.fault_on, study_low.post,
                              study_low.init.theta0, 0.2, 1.5, h)
        s = diameter(traj)
        start = int(np.flatnonzero(traj.phase == FAULT_ON)[-1])
        return s.d[first_swing_end(s, start)]
    assert abs(peak(1e-3) - peak(5e-4)) < 1e-5


def test_clearing_instant_on_grid(study_low):
    traj = simulate_fault(study_low.pre, study_low.fault_on, study_low.post,
                          study_low.init.theta0, 0.2037, 0.5, 1e-3)
    on = np.flatnonzero(traj.phase == FAULT_ON)
    assert traj.t[on[-1]] == pytest.approx(0.2037, abs=1e-15)
    assert np.allclose(np.diff(traj.t), traj.step, rtol=1e-9)
    assert traj.phase[-1] == POST_FAULT
    post = traj.post_fault()
    assert post.t[0] == pytest.approx(0.2037)


def test_zero_clearing_time_starts_post_fault(study_low):
    traj = simulate_fault(study_low.pre, study_low.fault_on, study_low.post,
                          study_low.init.theta0, 0.0, 1.0)
    assert traj.phase[0] == FAULT_ON and np.all(traj.phase[1:] == POST_FAULT)
    assert np.ptp(diameter(traj).d) < 1e-6


def test_fault_scenario_validation(net9, study_low):
    with pytest.raises(ValueError):
        FaultScenario(1, -0.1)
    with pytest.raises(ValueError):
        faulted_reduction(net9, study_low.pf, FaultScenario(42, 0.1))


def test_non_finite_state_reported():
    red = _two_machine()
    with pytest.raises(NonFiniteStateError) as err:
        integrate_swing(red, np.array([np.nan, 0.0]), np.zeros(2), (0.0, 0.1))
    assert err.value.time == pytest.approx(1e-3)


def test_diameter_uses_extreme_machines():
    from gronstab.dynamics import Trajectory
    theta = np.array([[0.1, 0.5, -0.2], [0.4, 0.0, 0.3]])
    omega = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    s = diameter(Trajectory(np.array([0.0, 1.0]), theta, omega, np.array([1, 1])))
    assert np.allclose(s.d, [0.7, 0.4])
    assert np.allclose(s.d_dot, [2.0 - 3.0, 4.0 - 5.0])
    assert list(s.lead) == [1, 0] and list(s.lag) == [2, 1]


def test_long_fault_is_numerically_unstable(study_low):
    traj = simulate_fault(study_low.pre, study_low.fault_on, study_low.post,
                          study_low.init.theta0, 0.6, 2.0)
    assert numerically_unstable(diameter(traj))


def test_trajectory_csv(tmp_path, study_low):
    traj = simulate_fault(study_low.pre, study_low.fault_on, study_low.post,
                          study_low.init.theta0, 0.1, 0.2)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    lines = path.read_bytes().split(b"\r\n")
    assert lines[0] == b"t,theta_1,theta_2,theta_3,omega_1,omega_2,omega_3,D,D_dot"
    assert len([ln for ln in lines if ln]) == len(traj.t) + 1
