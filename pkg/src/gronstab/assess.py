"""Stability certification, critical clearing time and the margin index."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (DEFAULT_HORIZON, DEFAULT_STEP, FaultScenario, NonFiniteStateError,
                       Trajectory, diameter, faulted_reduction, simulate_fault)
from .envelope import EnvelopeInvalidError, EnvelopeParams, EnvelopeRecord, envelope_params
from .gronwall import DEFAULT_EDGES, BoundCurve, bound_peak, propagate_with_switching
from .netmodel import PowerNetwork, ReducedNetwork
from .powerflow import (ClassicalInit, PowerFlowSolution, init_classical, prefault_reduction,
                        solve_power_flow)

log = logging.getLogger(__name__)

ANALYTIC = "analytic"
NUMERICAL = "numerical"
STABLE = "bounded-below-pi"
UNSTABLE = "crosses-pi"


class NoMarginError(ValueError):
    """The lower end of the CCT bracket is already unstable."""


@dataclass(frozen=True)
class Study:
    """Everything about a case that does not depend on the clearing time."""

    net: PowerNetwork
    bus: int
    pf: PowerFlowSolution
    init: ClassicalInit
    pre: ReducedNetwork
    fault_on: ReducedNetwork
    post: ReducedNetwork
    env: EnvelopeParams | None
    env_error: str | None = None
    horizon: float = DEFAULT_HORIZON
    h: float = DEFAULT_STEP
    edges: tuple[float, ...] = DEFAULT_EDGES
    zeta: float = math.pi

    @property
    def lam(self) -> float:
        return self.post.lam

    @classmethod
    def prepare(cls, net: PowerNetwork, fault_bus: int, lam: float | None = None,
                horizon: float = DEFAULT_HORIZON, h: float = DEFAULT_STEP,
                edges: Sequence[float] = DEFAULT_EDGES, zeta: float = math.pi,
                env_edges: Sequence[float] = (0.0, math.pi)) -> "Study":
        if lam is not None:
            net = net.with_damping_ratio(lam)
        pf = solve_power_flow(net)
        init = init_classical(net, pf)
        pre = prefault_reduction(net, pf, init)
        fault_on = faulted_reduction(net, pf, FaultScenario(fault_bus, 0.0), init)
        post = pre  # topology unchanged after clearing
        try:
            env, err = envelope_params(post, "worst", env_edges), None
        except EnvelopeInvalidError as exc:
            env, err = None, str(exc)
        return cls(net, fault_bus, pf, init, pre, fault_on, post, env, err, horizon, h,
                   tuple(edges), zeta)

    def simulate(self, t_c: float) -> Trajectory:
        return simulate_fault(self.pre, self.fault_on, self.post, self.init.theta0, t_c,
                              self.horizon, self.h)

    def clearing_state(self, t_c: float) -> tuple[float, float]:
        """(D0, D0') at the clearing instant from the fault-on integration only."""
        traj = simulate_fault(self.pre, self.fault_on, self.post, self.init.theta0, t_c, t_c, self.h)
        s = diameter(traj)
        return float(s.d[-1]), float(s.d_dot[-1])


@dataclass(frozen=True)
class Assessment:
    clearing_time: float
    d0: float
    d0_dot: float
    analytic_verdict: str
    bound_peak: float | None          # diameter coordinates
    bound_peak_time: float | None     # seconds after clearing
    bound: BoundCurve | None
    numerical_verdict: str | None = None
    numerical_peak: float | None = None
    freq_spread_end: float | None = None
    notes: tuple[str, ...] = ()
    series: object = field(default=None, repr=False, compare=False)

    @property
    def analytic_stable(self) -> bool:
        return self.analytic_verdict == STABLE

    @property
    def numerical_stable(self) -> bool | None:
        return None if self.numerical_verdict is None else self.numerical_verdict == STABLE

    def first_swing_switches(self) -> int:
        """Segment switches that happen before the bound's first-swing peak."""
        if self.bound is None:
            return 0
        t = self.bound_peak_time if self.bound_peak_time is not None else self.bound.t_end
        return self.bound.switches_before(t)

    def as_dict(self, study: Study | None = None) -> dict:
        out = {
            "clearing_time": self.clearing_time,
            "d0": self.d0,
            "d0_dot": self.d0_dot,
            "analytic": {
                "verdict": self.analytic_verdict,
                "bound_peak": self.bound_peak,
                "bound_peak_time_after_clearing": self.bound_peak_time,
                "bound": self.bound.as_dict() if self.bound is not None else None,
                "switch_times_after_clearing": [s.time for s in self.bound.switches] if self.bound else [],
                "switch_times_since_fault": ([s.time + self.clearing_time for s in self.bound.switches]
                                             if self.bound else []),
                "first_swing_switches": self.first_swing_switches(),
            },
            "numerical": {
                "verdict": self.numerical_verdict,
                "peak": self.numerical_peak,
                "freq_spread_at_horizon": self.freq_spread_end,
            },
            "notes": list(self.notes),
        }
        if study is not None:
            out["inputs"] = {"fault_bus": study.bus, "lambda": study.lam, "horizon": study.horizon,
                             "step": study.h, "zeta": study.zeta, "edges": list(study.edges)}
            out["envelope"] = study.env.as_dict() if study.env is not None else None
            out["mu"] = margin_index(study.env).mu if study.env is not None else None
        return out


def _analytic(study: Study, d0: float, d0_dot: float):
    if study.env is None:
        raise EnvelopeInvalidError(study.env_error or "no valid envelope")
    curve = propagate_with_switching(study.env, study.lam, d0, d0_dot, study.horizon, study.edges)
    if curve.verdict == UNSTABLE:
        return curve, UNSTABLE, None, None
    pk = bound_peak(curve)
    d_peak = pk.d_peak(curve.phi)
    # an optional threshold below pi tightens the verdict
    verdict = UNSTABLE if d_peak >= study.zeta else STABLE
    return curve, verdict, d_peak, pk.time


def certify(study: Study, t_c: float, numerical: bool = True) -> Assessment:
    """Analytic (and optionally numerical) verdict for one clearing time."""
    notes = []
    series = None
    if numerical:
        try:
            traj = study.simulate(t_c)
            full = diameter(traj)
            i_c = int(np.flatnonzero(traj.phase == 0)[-1])
            d0, d0_dot = float(full.d[i_c]), float(full.d_dot[i_c])
            post = full.d[i_c:]
            num_peak = float(post.max())
            num_verdict = UNSTABLE if num_peak >= study.zeta else STABLE
            spread = float(np.ptp(traj.omega[-1]))
            series = full
        except NonFiniteStateError as exc:
            notes.append(str(exc))
            d0, d0_dot = study.clearing_state(t_c)
            num_peak, num_verdict, spread = math.inf, UNSTABLE, None
    else:
        d0, d0_dot = study.clearing_state(t_c)
        num_peak = num_verdict = spread = None

    try:
        curve, verdict, peak, t_peak = _analytic(study, d0, d0_dot)
    except ValueError as exc:
        # initial state outside the linearized range counts as not certified
        if isinstance(exc, EnvelopeInvalidError):
            raise
        notes.append(f"bound not applicable: {exc}")
        curve, verdict, peak, t_peak = None, UNSTABLE, None, None
    return Assessment(t_c, d0, d0_dot, verdict, peak, t_peak, curve,
                      num_verdict, num_peak, spread, tuple(notes), series)


@dataclass(frozen=True)
class CctResult:
    mode: str
    cct: float
    bracket: tuple[float, float]
    tol: float
    log: tuple[tuple[float, str], ...]
    capped: bool = False
    non_monotone: tuple[tuple[float, float], ...] = ()

    def as_dict(self) -> dict:
        return {"mode": self.mode, "cct": self.cct, "bracket": list(self.bracket), "tol": self.tol,
                "capped": self.capped,
                "note": "no instability found in bracket" if self.capped else None,
                "iterations": [{"t_c": t, "verdict": v} for t, v in self.log],
                "non_monotone": [list(p) for p in self.non_monotone]}


def _verdict(study: Study, t_c: float, mode: str) -> str:
    a = certify(study, t_c, numerical=(mode == NUMERICAL))
    return a.analytic_verdict if mode == ANALYTIC else a.numerical_verdict


def estimate_cct(study: Study, mode: str = ANALYTIC, bracket: tuple[float, float] = (0.0, 2.0),
                 tol: float = 0.005, monotone_checks: int = 4) -> CctResult:
    """Bisection on the clearing time; the reported CCT is the last stable probe."""
    if mode not in (ANALYTIC, NUMERICAL):
        raise ValueError(f"unknown mode {mode!r}")
    lo, hi = map(float, bracket)
    if not hi > lo:
        raise ValueError("bracket must be increasing")
    trail: list[tuple[float, str]] = []

    def probe(t):
        v = _verdict(study, t, mode)
        trail.append((t, v))
        return v

    if probe(lo) != STABLE:
        raise NoMarginError(f"{mode} verdict is already unstable at t_c = {lo}")
    if probe(hi) == STABLE:
        return CctResult(mode, hi, (lo, hi), tol, tuple(trail), capped=True)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid) == STABLE:
            lo = mid
        else:
            hi = mid

    # spot-check monotonicity below the estimate
    non_monotone = []
    unstable_seen = [t for t, v in trail if v != STABLE]
    for t in np.linspace(bracket[0], lo, monotone_checks + 2)[1:-1]:
        if probe(float(t)) != STABLE:
            above = [u for u, v in trail if v == STABLE and u > t]
            non_monotone.append((float(t), float(above[0]) if above else lo))
    for t, v in trail:
        if v == STABLE and any(u < t for u in unstable_seen):
            non_monotone.append((min(u for u in unstable_seen if u < t), t))
    for pair in non_monotone:
        log.warning("non-monotone %s verdict: unstable at %.4f s but stable at %.4f s", mode, *pair)
    return CctResult(mode, lo, tuple(map(float, bracket)), tol, tuple(trail), False, tuple(non_monotone))


@dataclass(frozen=True)
class MarginIndex:
    mu: float
    gamma: float
    ell: float


def margin_index(env: EnvelopeParams | EnvelopeRecord) -> MarginIndex:
    """mu = L / Gamma from the first envelope record."""
    rec = env if isinstance(env, EnvelopeRecord) else env.records[0]
    if not rec.gamma > 0:
        raise EnvelopeInvalidError("margin index needs Gamma > 0")
    return MarginIndex(rec.ell / rec.gamma, rec.gamma, rec.ell)


@dataclass(frozen=True)
class SweepRow:
    value: float
    mu: float | None
    cct_analytic: float | None
    cct_numerical: float | None
    error: str | None = None

    def as_row(self) -> list:
        return [self.value, _nan(self.mu), _nan(self.cct_analytic), _nan(self.cct_numerical),
                self.error or ""]


def _nan(x):
    return math.nan if x is None else x


def apply_parameter(net: PowerNetwork, path: str, value: float) -> tuple[PowerNetwork, float | None]:
    """Apply a sweep parameter. Paths: ``lambda`` or ``branch:<from>-<to>:x``."""
    if path == "lambda":
        return net.with_damping_ratio(value), value
    parts = path.split(":")
    if len(parts) == 3 and parts[0] == "branch" and parts[2] == "x":
        f, t = (int(p) for p in parts[1].split("-"))
        return net.with_branch_reactance(f, t, value), None
    raise ValueError(f"unsupported sweep parameter {path!r}")


def _sweep_point(args) -> SweepRow:
    net, bus, path, value, lam, kw = args
    try:
        net_v, lam_v = apply_parameter(net, path, value)
        study = Study.prepare(net_v, bus, lam=lam_v if lam_v is not None else lam, **kw)
        mu = margin_index(study.env).mu if study.env is not None else None
        try:
            cct_a = estimate_cct(study, ANALYTIC).cct
        except (NoMarginError, EnvelopeInvalidError) as exc:
            cct_a = None
            log.info("analytic CCT unavailable at %s=%s: %s", path, value, exc)
        cct_n = estimate_cct(study, NUMERICAL).cct
        return SweepRow(float(value), mu, cct_a, cct_n)
    except Exception as exc:  # collected per point, the sweep carries on
        return SweepRow(float(value), None, None, None, f"{type(exc).__name__}: {exc}")


def sweep(net: PowerNetwork, fault_bus: int, path: str, values: Sequence[float],
          lam: float | None = None, workers: int = 1, **study_kw) -> list[SweepRow]:
    """Re-run the full pipeline per parameter value; rows keep the input order."""
    jobs = [(net, fault_bus, path, float(v), lam, study_kw) for v in values]
    if not jobs:
        return []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]
