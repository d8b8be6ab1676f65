"""Time-domain simulation of the classical swing equations.

Fixed-step RK4 on the 2n-dimensional state (theta, theta'); the fault-on and
post-fault phases share one uniform grid that contains the clearing instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netmodel import PowerNetwork, ReducedNetwork
from .powerflow import ClassicalInit, PowerFlowSolution, prefault_reduction

DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 5.0

FAULT_ON = 0
POST_FAULT = 1


class NonFiniteStateError(FloatingPointError):
    def __init__(self, time: float):
        super().__init__(f"state became non-finite at t = {time:.6g} s")
        self.time = time


@dataclass(frozen=True)
class FaultScenario:
    bus: int
    clearing_time: float
    start: float = 0.0

    def __post_init__(self):
        if not self.clearing_time >= self.start:
            raise ValueError("clearing time must not precede the fault start")

    def validate(self, net: PowerNetwork) -> None:
        if self.bus not in net.bus_ids:
            raise ValueError(f"faulted bus {self.bus} does not exist")


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray            # (N,)
    theta: np.ndarray        # (N, n)
    omega: np.ndarray        # (N, n) rotor speed deviation d(theta)/dt
    phase: np.ndarray        # (N,) FAULT_ON / POST_FAULT

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def index_at(self, time: float) -> int:
        i = int(np.argmin(np.abs(self.t - time)))
        return i

    def post_fault(self) -> "Trajectory":
        """Post-fault part, starting at the clearing instant."""
        on = np.flatnonzero(self.phase == FAULT_ON)
        start = int(on[-1]) if on.size else 0
        sl = slice(start, None)
        return Trajectory(self.t[sl], self.theta[sl], self.omega[sl], self.phase[sl])


def _rhs(red: ReducedNetwork, theta, omega):
    return omega, red.acceleration(theta) - red.lam * omega


def integrate_swing(red: ReducedNetwork, theta0, omega0, t_span: tuple[float, float],
                    h: float = DEFAULT_STEP, phase: int = POST_FAULT) -> Trajectory:
    """Classical RK4 with a fixed step; the step is shrunk so it divides the span."""
    if not h > 0:
        raise ValueError("step must be positive")
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    steps = int(math.ceil((t1 - t0) / h - 1e-9)) if t1 > t0 else 0
    hh = (t1 - t0) / steps if steps else h
    n = red.n
    theta = np.empty((steps + 1, n))
    omega = np.empty((steps + 1, n))
    theta[0] = theta0
    omega[0] = omega0
    x, v = theta[0].copy(), omega[0].copy()
    for k in range(steps):
        k1x, k1v = _rhs(red, x, v)
        k2x, k2v = _rhs(red, x + 0.5 * hh * k1x, v + 0.5 * hh * k1v)
        k3x, k3v = _rhs(red, x + 0.5 * hh * k2x, v + 0.5 * hh * k2v)
        k4x, k4v = _rhs(red, x + hh * k3x, v + hh * k3v)
        x = x + hh / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + hh / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise NonFiniteStateError(t0 + (k + 1) * hh)
        theta[k + 1] = x
        omega[k + 1] = v
    t = t0 + hh * np.arange(steps + 1)
    if steps:
        t[-1] = t1
    return Trajectory(t, theta, omega, np.full(steps + 1, phase, dtype=int))


def faulted_reduction(net: PowerNetwork, pf: PowerFlowSolution, fault: FaultScenario,
                      init: ClassicalInit | None = None, method: str = "exact") -> ReducedNetwork:
    """Fault-on reduced network: the faulted bus is held at zero voltage."""
    from .powerflow import init_classical

    fault.validate(net)
    if init is None:
        init = init_classical(net, pf)
    return prefault_reduction(net, pf, init, grounded=[fault.bus], ground_method=method)


def simulate_fault(pre: ReducedNetwork, fault_on: ReducedNetwork, post: ReducedNetwork,
                   theta0, clearing_time: float, horizon: float = DEFAULT_HORIZON,
                   h: float = DEFAULT_STEP) -> Trajectory:
    """Fault at t = 0 from the pre-fault equilibrium, cleared at ``clearing_time``.

    The step is chosen as the largest value <= h that puts the clearing
    instant on the grid; both phases use it so the grid stays uniform.
    """
    del pre  # the pre-fault network only fixes the initial equilibrium
    if clearing_time > 0:
        hh = clearing_time / math.ceil(clearing_time / h - 1e-9)
    else:
        hh = h
    omega0 = np.zeros_like(np.asarray(theta0, dtype=float))
    if clearing_time > 0:
        on = integrate_swing(fault_on, theta0, omega0, (0.0, clearing_time), hh, FAULT_ON)
    else:
        on = Trajectory(np.array([0.0]), np.array([theta0], dtype=float), omega0[None, :],
                        np.array([FAULT_ON]))
    end = max(horizon, clearing_time)
    n_post = int(round((end - clearing_time) / hh))
    off = integrate_swing(post, on.theta[-1], on.omega[-1],
                          (clearing_time, clearing_time + n_post * hh), hh, POST_FAULT)
    return Trajectory(np.concatenate([on.t, off.t[1:]]),
                      np.vstack([on.theta, off.theta[1:]]),
                      np.vstack([on.omega, off.omega[1:]]),
                      np.concatenate([on.phase, off.phase[1:]]))


@dataclass(frozen=True)
class DiameterSeries:
    t: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    lead: np.ndarray
    lag: np.ndarray

    def at(self, time: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.t - time)))
        return float(self.d[i]), float(self.d_dot[i])


def diameter(traj: Trajectory) -> DiameterSeries:
    """D = max(theta) - min(theta) and its rate from the extreme machines.

    Machine indices are 0-based; ties go to the lowest index.
    """
    if len(traj.t) == 0:
        raise ValueError("empty trajectory")
    lead = np.argmax(traj.theta, axis=1)
    lag = np.argmin(traj.theta, axis=1)
    rows = np.arange(len(traj.t))
    d = traj.theta[rows, lead] - traj.theta[rows, lag]
    d_dot = traj.omega[rows, lead] - traj.omega[rows, lag]
    return DiameterSeries(traj.t, d, d_dot, lead, lag)


def first_swing_end(series: DiameterSeries, start: int = 0) -> int:
    """Index of the first local maximum of D at or after ``start`` (last index if none)."""
    d = series.d
    for i in range(start + 1, len(d) - 1):
        if d[i] >= d[i - 1] and d[i] > d[i + 1]:
            return i
    return len(d) - 1


def numerically_unstable(series: DiameterSeries, zeta: float = math.pi) -> bool:
    return bool(np.max(series.d) >= zeta)


def write_trajectory_csv(path, traj: Trajectory, series: DiameterSeries | None = None) -> None:
    from .report import write_csv

    series = series or diameter(traj)
    n = traj.theta.shape[1]
    header = (["t"] + [f"theta_{i + 1}" for i in range(n)]
              + [f"omega_{i + 1}" for i in range(n)] + ["D", "D_dot"])
    rows = np.column_stack([traj.t, traj.theta, traj.omega, series.d, series.d_dot])
    write_csv(path, header, rows)
