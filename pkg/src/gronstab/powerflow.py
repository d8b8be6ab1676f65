"""Newton-Raphson power flow and classical machine initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import PowerNetwork, build_admittance, reduce_to_generators, ReducedNetwork


class PowerFlowError(RuntimeError):
    """Power flow failed to converge or hit a singular Jacobian."""


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    v: np.ndarray          # complex bus voltages
    s_inj: np.ndarray      # complex net injections V * conj(Y V)
    iterations: int
    max_mismatch: float

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def va(self) -> np.ndarray:
        return np.angle(self.v)

    def voltage(self, bus_id: int) -> complex:
        return complex(self.v[self.bus_ids.index(bus_id)])

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "max_mismatch": self.max_mismatch,
            "buses": [
                {"id": b, "vm": float(abs(v)), "va": float(np.angle(v)),
                 "p_inj": float(s.real), "q_inj": float(s.imag)}
                for b, v, s in zip(self.bus_ids, self.v, self.s_inj)
            ],
        }


def _jacobian(ybus: np.ndarray, v: np.ndarray):
    """dS/d|V| and dS/dtheta in polar form."""
    i = ybus @ v
    vnorm = v / np.abs(v)
    ds_dvm = np.diag(v) @ np.conj(ybus @ np.diag(vnorm)) + np.diag(np.conj(i) * vnorm)
    ds_dva = 1j * np.diag(v) @ np.conj(np.diag(i) - ybus @ np.diag(v))
    return ds_dvm, ds_dva


def solve_power_flow(net: PowerNetwork, tol: float = 1e-8, max_iter: int = 20) -> PowerFlowSolution:
    """Full Newton power flow in polar coordinates from a flat start.

    Reactive limits of PV buses are not enforced.
    """
    ybus = build_admittance(net).y
    ids = net.bus_ids
    kinds = [b.kind for b in net.buses]
    ref = [k for k, t in enumerate(kinds) if t == "slack"]
    pv = [k for k, t in enumerate(kinds) if t == "pv"]
    sbus = np.array([-complex(b.p_load, b.q_load) for b in net.buses])
    # an unloaded bus with no connections has no equations; its voltage stays flat
    idle = [k for k in range(len(ids)) if not np.any(ybus[k]) and sbus[k] == 0]
    pq = [k for k, t in enumerate(kinds) if t == "pq" and k not in idle]
    pvpq = pv + pq

    for g in net.generators:
        k = ids.index(g.bus)
        if kinds[k] != "slack":
            sbus[k] += g.p_mech

    vm = np.ones(len(ids))
    for k in ref + pv:
        vm[k] = net.buses[k].v_set
    va = np.zeros(len(ids))
    v = vm * np.exp(1j * va)

    npvpq, npq = len(pvpq), len(pq)
    worst = 0.0
    for it in range(1, max_iter + 1):
        mis = v * np.conj(ybus @ v) - sbus
        f = np.concatenate([mis.real[pvpq], mis.imag[pq]])
        if not np.all(np.isfinite(f)):
            raise PowerFlowError(f"non-finite mismatch at iteration {it}")
        worst = float(np.abs(f).max()) if f.size else 0.0
        if worst < tol:
            s_inj = v * np.conj(ybus @ v)
            return PowerFlowSolution(tuple(ids), v, s_inj, it, worst)
        ds_dvm, ds_dva = _jacobian(ybus, v)
        j = np.block([
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(j, -f)
        except np.linalg.LinAlgError:
            bus = _worst_bus(f, pvpq, pq, ids)
            raise PowerFlowError(
                f"singular Jacobian at iteration {it}; worst mismatch {worst:.3e} at bus {bus}"
            ) from None
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:npvpq + npq]
        v = vm * np.exp(1j * va)

    mis = v * np.conj(ybus @ v) - sbus
    f = np.concatenate([mis.real[pvpq], mis.imag[pq]])
    bus = _worst_bus(f, pvpq, pq, ids) if np.all(np.isfinite(f)) else "?"
    raise PowerFlowError(
        f"no convergence after {max_iter} iterations; worst mismatch {worst:.3e} at bus {bus}"
    )


def _worst_bus(f, pvpq, pq, ids):
    order = list(pvpq) + list(pq)
    return ids[order[int(np.argmax(np.abs(f)))]]


@dataclass(frozen=True)
class ClassicalInit:
    emf: np.ndarray        # complex internal EMF E' per generator
    p_mech: np.ndarray     # mechanical power balancing the pre-fault operating point

    @property
    def emf_mag(self) -> np.ndarray:
        return np.abs(self.emf)

    @property
    def theta0(self) -> np.ndarray:
        return np.angle(self.emf)


def internal_emf(v_terminal: complex, s_gen: complex, xd_prime: float) -> complex:
    """E' = V + j x' I with I = conj(S / V)."""
    if v_terminal == 0:
        raise ValueError("zero terminal voltage")
    current = np.conj(s_gen / v_terminal)
    return complex(v_terminal + 1j * xd_prime * current)


def init_classical(net: PowerNetwork, pf: PowerFlowSolution) -> ClassicalInit:
    emf = []
    pm = []
    for g in net.generators:
        b = net.bus(g.bus)
        v = pf.voltage(g.bus)
        s_gen = complex(pf.s_inj[pf.bus_ids.index(g.bus)]) + complex(b.p_load, b.q_load)
        emf.append(internal_emf(v, s_gen, g.xd_prime))
        pm.append(s_gen.real)
    return ClassicalInit(np.array(emf), np.array(pm))


def prefault_reduction(net: PowerNetwork, pf: PowerFlowSolution, init: ClassicalInit,
                       grounded=(), ground_method: str = "exact") -> ReducedNetwork:
    """Reduced network with loads frozen as impedances at the power-flow voltages."""
    return reduce_to_generators(net, dict(zip(pf.bus_ids, pf.v)), init.emf, init.p_mech,
                                grounded=grounded, ground_method=ground_method)
