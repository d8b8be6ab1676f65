"""Sinusoidal upper envelope of the rotor-angle-diameter dynamics.

For the machines M (leading) and m (lagging) the diameter D = theta_M - theta_m
obeys

    D'' + lam D' = (Omega_M - Omega_m)
                   + a_Mm sin(alpha_Mm - D) - a_mM sin(D + alpha_mM)
                   + sum_{j != M, m} f_j(theta_jm)

with f_j(x) = a_Mj sin(x - D + alpha_Mj) - a_mj sin(x + alpha_mj) and
x = theta_j - theta_m in [0, D].  The envelope replaces the right-hand side
by ``Gamma - L sin(D + Phi)``, which must dominate it for every admissible
configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .netmodel import ReducedNetwork

FIT_STEP = 1e-3
CHECK_STEP = 1e-4


class EnvelopeInvalidError(ValueError):
    """Gamma or L is not positive; the bounding method does not apply."""


@dataclass(frozen=True)
class MachinePairContext:
    lead: int
    lag: int
    d_omega: float
    a_lead: np.ndarray     # a_Mj over all j
    a_lag: np.ndarray      # a_mj over all j
    alpha_lead: np.ndarray
    alpha_lag: np.ndarray
    others: tuple[int, ...]

    @classmethod
    def from_reduced(cls, red: ReducedNetwork, lead: int, lag: int) -> "MachinePairContext":
        if lead == lag:
            raise ValueError("lead and lag machines must differ")
        others = tuple(j for j in range(red.n) if j not in (lead, lag))
        return cls(lead, lag, float(red.omega[lead] - red.omega[lag]),
                   red.a[lead].copy(), red.a[lag].copy(),
                   red.alpha[lead].copy(), red.alpha[lag].copy(), others)

    def exact_coefficients(self) -> tuple[float, float, float]:
        """(K0, Ks, Kc) of the two-machine terms, which are already a sinusoid in D."""
        a_lm, al_lm = self.a_lead[self.lag], self.alpha_lead[self.lag]
        a_ml, al_ml = self.a_lag[self.lead], self.alpha_lag[self.lead]
        ks = -a_lm * math.cos(al_lm) - a_ml * math.cos(al_ml)
        kc = a_lm * math.sin(al_lm) - a_ml * math.sin(al_ml)
        return self.d_omega, ks, kc

    def f(self, x, D, j: int):
        return (self.a_lead[j] * np.sin(x - D + self.alpha_lead[j])
                - self.a_lag[j] * np.sin(x + self.alpha_lag[j]))


def fj_max(D, j: int, ctx: MachinePairContext):
    """Maximum of f_j over theta_jm in [0, D]; vectorised over D.

    f_j is a single sinusoid R sin(x + psi) in x, so the maximum is at an
    endpoint or at the interior point x = pi/2 - psi (mod 2 pi).
    """
    D = np.asarray(D, dtype=float)
    aM, aL = ctx.a_lead[j], ctx.a_lag[j]
    alM, alL = ctx.alpha_lead[j], ctx.alpha_lag[j]
    A = aM * np.cos(alM - D) - aL * math.cos(alL)
    B = aM * np.sin(alM - D) - aL * math.sin(alL)
    R = np.hypot(A, B)
    psi = np.arctan2(B, A)
    best = np.maximum(ctx.f(0.0, D, j), ctx.f(D, D, j))
    xstar = np.mod(np.pi / 2 - psi, 2 * np.pi)
    interior = (xstar <= D) & (R > 0)
    return np.where(interior, np.maximum(best, R), best)


def pair_upper(D, ctx: MachinePairContext):
    """Pointwise upper bound of the diameter right-hand side for one ordered pair."""
    D = np.asarray(D, dtype=float)
    k0, ks, kc = ctx.exact_coefficients()
    total = k0 + ks * np.sin(D) + kc * np.cos(D)
    for j in ctx.others:
        total = total + fj_max(D, j, ctx)
    return total


@dataclass(frozen=True)
class EnvelopeRecord:
    d_lo: float
    d_hi: float
    gamma: float
    ell: float
    phi: float
    fit_gap: float = 0.0        # max of envelope minus pointwise bound on the check grid
    exact: bool = False

    def __call__(self, D):
        return self.gamma - self.ell * np.sin(np.asarray(D) + self.phi)

    def as_dict(self) -> dict:
        return {"d_lo": self.d_lo, "d_hi": self.d_hi, "gamma": self.gamma, "L": self.ell,
                "phi": self.phi, "fit_gap": self.fit_gap, "exact": self.exact}


@dataclass(frozen=True)
class EnvelopeParams:
    records: tuple[EnvelopeRecord, ...]
    policy: object = "worst"
    pairs: tuple[tuple[int, int], ...] = field(default=())

    def record_for(self, D: float) -> EnvelopeRecord:
        for r in self.records:
            if r.d_lo <= D < r.d_hi:
                return r
        if D == self.records[-1].d_hi:
            return self.records[-1]
        raise ValueError(f"D = {D} outside the envelope intervals")

    @property
    def single(self) -> EnvelopeRecord:
        if len(self.records) != 1:
            raise ValueError("envelope has several intervals; a single record was expected")
        return self.records[0]

    def as_dict(self) -> dict:
        return {"policy": self.policy if isinstance(self.policy, str) else list(self.policy),
                "pairs": [list(p) for p in self.pairs],
                "records": [r.as_dict() for r in self.records]}


def to_amplitude_phase(k0: float, ks: float, kc: float) -> tuple[float, float, float]:
    """Rewrite K0 + Ks sin D + Kc cos D as Gamma - L sin(D + Phi)."""
    ell = math.hypot(ks, kc)
    phi = math.atan2(-kc, -ks)
    return k0, ell, phi


def _fit_dominating(grid: np.ndarray, target: np.ndarray) -> tuple[float, float, float]:
    """Smallest-max-gap K0 + Ks sin + Kc cos that lies on or above ``target``.

    Stage one minimises the maximum gap, stage two the mean gap at that
    maximum so the answer is unique.
    """
    s, c = np.sin(grid), np.cos(grid)
    n = len(grid)
    ones = np.ones(n)
    # variables (K0, Ks, Kc, t)
    a_dom = -np.column_stack([ones, s, c, np.zeros(n)])
    a_gap = np.column_stack([ones, s, c, -ones])
    a_ub = np.vstack([a_dom, a_gap])
    b_ub = np.concatenate([-target, target])
    free = [(None, None)] * 3
    res = linprog([0, 0, 0, 1], A_ub=a_ub, b_ub=b_ub, bounds=free + [(0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"envelope fit failed: {res.message}")
    t_star = res.x[3]
    cost = np.array([n, s.sum(), c.sum()])
    res2 = linprog(cost, A_ub=np.vstack([a_dom[:, :3], a_gap[:, :3]]),
                   b_ub=np.concatenate([-target, target + t_star * (1 + 1e-9) + 1e-12]),
                   bounds=free, method="highs")
    x = res2.x if res2.status == 0 else res.x[:3]
    return float(x[0]), float(x[1]), float(x[2])


def _all_pairs(n: int):
    return [(M, m) for M in range(n) for m in range(n) if M != m]


def envelope_params(reduced: ReducedNetwork, pair_policy="worst",
                    edges: Sequence[float] = (0.0, math.pi),
                    fit_step: float = FIT_STEP, check_step: float = CHECK_STEP) -> EnvelopeParams:
    """Per-interval (Gamma, L, Phi) dominating the diameter dynamics.

    ``pair_policy`` is ``"worst"`` (cover every ordered machine pair) or an
    explicit ``(lead, lag)`` tuple.
    """
    if reduced.n < 2:
        raise ValueError("need at least two machines")
    if isinstance(pair_policy, str):
        if pair_policy != "worst":
            raise ValueError(f"unknown pair policy {pair_policy!r}")
        pairs = _all_pairs(reduced.n)
    else:
        pairs = [tuple(int(v) for v in pair_policy)]
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] < 0 or edges[-1] > math.pi:
        raise ValueError("edges must increase within [0, pi]")
    ctxs = [MachinePairContext.from_reduced(reduced, M, m) for M, m in pairs]

    records = []
    for lo, hi in zip(edges, edges[1:]):
        if len(ctxs) == 1 and not ctxs[0].others:
            k0, ks, kc = ctxs[0].exact_coefficients()
            gamma, ell, phi = to_amplitude_phase(k0, ks, kc)
            rec = EnvelopeRecord(lo, hi, gamma, ell, phi, 0.0, exact=True)
        else:
            rec = _fit_interval(ctxs, lo, hi, fit_step, check_step)
        if not rec.gamma > 0 or not rec.ell > 0:
            raise EnvelopeInvalidError(
                f"envelope on [{lo:.4g}, {hi:.4g}) has Gamma={rec.gamma:.6g}, L={rec.ell:.6g}; both must be positive"
            )
        records.append(rec)
    return EnvelopeParams(tuple(records), pair_policy if isinstance(pair_policy, str) else tuple(pairs[0]),
                          tuple(pairs))


def _upper(ctxs, D):
    return np.max([pair_upper(D, c) for c in ctxs], axis=0)


def _curvature_bound(ctxs) -> float:
    worst = 0.0
    for c in ctxs:
        amp = c.a_lead[c.lag] + c.a_lag[c.lead]
        amp += sum(2.0 * (c.a_lead[j] + c.a_lag[j]) for j in c.others)
        worst = max(worst, amp)
    return worst


def _fit_interval(ctxs, lo, hi, fit_step, check_step) -> EnvelopeRecord:
    n_fit = max(int(math.ceil((hi - lo) / fit_step)), 8) + 1
    grid = np.linspace(lo, hi, n_fit)
    k0, ks, kc = _fit_dominating(grid, _upper(ctxs, grid))

    # certify between grid points: fine-grid check plus a curvature allowance
    n_chk = max(int(math.ceil((hi - lo) / check_step)), 8) + 1
    fine = np.linspace(lo, hi, n_chk)
    target = _upper(ctxs, fine)
    gap = k0 + ks * np.sin(fine) + kc * np.cos(fine) - target
    h = (hi - lo) / (n_chk - 1)
    allowance = h * h / 8.0 * (math.hypot(ks, kc) + _curvature_bound(ctxs))
    shift = max(0.0, -float(gap.min())) + allowance
    k0 += shift
    gamma, ell, phi = to_amplitude_phase(k0, ks, kc)
    return EnvelopeRecord(lo, hi, gamma, ell, phi, float((gap + shift).max()))


@dataclass(frozen=True)
class DominanceReport:
    samples: int
    min_margin: float
    violations: int
    worst_sample: dict

    @property
    def ok(self) -> bool:
        return self.violations == 0


def diameter_rhs(reduced: ReducedNetwork, theta: np.ndarray) -> tuple[float, float, int, int]:
    """Exact right-hand side of the diameter equation at an angle configuration.

    Returns (rhs, D, lead, lag).
    """
    lead = int(np.argmax(theta))
    lag = int(np.argmin(theta))
    acc = reduced.acceleration(theta)
    return float(acc[lead] - acc[lag]), float(theta[lead] - theta[lag]), lead, lag


def verify_envelope(params: EnvelopeParams, reduced: ReducedNetwork, samples: int = 10_000,
                    seed: int = 0, tol: float = 1e-9,
                    d_range: tuple[float, float] | None = None) -> DominanceReport:
    """Monte-Carlo check that the envelope dominates the exact diameter dynamics.

    Every sample picks a covered (lead, lag) pair, a diameter inside one of
    the envelope intervals and the remaining angles inside [theta_m, theta_M].
    ``d_range`` narrows the sampled diameters, e.g. to one linearization segment.
    """
    rng = np.random.default_rng(seed)
    pairs = list(params.pairs) or _all_pairs(reduced.n)
    recs = params.records
    n = reduced.n
    min_margin = math.inf
    worst = {}
    violations = 0
    for k in range(samples):
        rec = recs[k % len(recs)]
        lead, lag = pairs[rng.integers(len(pairs))]
        lo, hi = rec.d_lo, rec.d_hi
        if d_range is not None:
            lo, hi = max(lo, d_range[0]), min(hi, d_range[1])
            if not hi > lo:
                raise ValueError("d_range does not overlap the envelope intervals")
        D = rng.uniform(lo, hi)
        base = rng.uniform(-math.pi, math.pi)
        theta = base + rng.uniform(0.0, D, size=n)
        theta[lag] = base
        theta[lead] = base + D
        acc = reduced.acceleration(theta)
        rhs = float(acc[lead] - acc[lag])
        margin = float(rec(D)) - rhs
        if margin < min_margin:
            min_margin = margin
            worst = {"lead": lead, "lag": lag, "D": D, "rhs": rhs, "envelope": float(rec(D))}
        if margin < -tol:
            violations += 1
    return DominanceReport(samples, min_margin, violations, worst)
