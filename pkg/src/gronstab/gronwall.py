"""Closed-form second-order Gronwall bounds with piecewise linearization.

The envelope inequality

    g'' + lam g' <= Gamma - L sin(g),      g = D + Phi

is linearized on each segment of [0, pi] by the chord of sin between the
segment edges.  Because sin is concave there, the chord lies under sin and
``-L * chord`` lies over ``-L sin``, so every segment yields a linear
inequality ``a y'' + b y' + c y + d <= 0`` whose solution is bounded by the
closed forms of :class:`GronwallCurve`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envelope import EnvelopeParams, EnvelopeRecord

DEFAULT_EDGES = (0.0, math.pi / 2, math.pi)
BISECT_TOL = 1e-9
MAX_SWITCHES = 10_000


@dataclass(frozen=True)
class SegmentODE:
    a: float
    b: float
    c: float
    d: float
    lo: float = 0.0
    hi: float = math.pi

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("the leading coefficient a must be positive")

    @property
    def disc(self) -> float:
        return self.b * self.b - 4.0 * self.a * self.c

    @property
    def case(self) -> str:
        if self.disc > 0:
            return "1.1"
        return "1.2" if self.b != 0 else "1.3"

    @property
    def v1(self) -> float:
        return (self.b + math.sqrt(self.disc)) / (2.0 * self.a)

    @property
    def v2(self) -> float:
        return (self.b - math.sqrt(self.disc)) / (2.0 * self.a)

    def as_dict(self) -> dict:
        out = {"a": self.a, "b": self.b, "c": self.c, "d": self.d, "lo": self.lo, "hi": self.hi,
               "case": self.case, "disc": self.disc}
        if self.case == "1.1":
            out.update(v1=self.v1, v2=self.v2)
        return out


def _record(env) -> EnvelopeRecord:
    if isinstance(env, EnvelopeRecord):
        return env
    if isinstance(env, EnvelopeParams):
        return env.single
    raise TypeError("expected EnvelopeParams or EnvelopeRecord")


def linearize_segment(env, seg_index: int, lam: float,
                      edges: Sequence[float] = DEFAULT_EDGES) -> SegmentODE:
    """Chord linearization of ``Gamma - L sin(g)`` on segment ``seg_index``."""
    rec = _record(env)
    edges = _check_edges(edges)
    if not 0 <= seg_index < len(edges) - 1:
        raise ValueError(f"segment {seg_index} is outside [0, pi); only the concave half-period is linearized")
    if not rec.gamma > 0 or not rec.ell > 0:
        raise ValueError("linearization requires Gamma > 0 and L > 0")
    lo, hi = edges[seg_index], edges[seg_index + 1]
    slope = (math.sin(hi) - math.sin(lo)) / (hi - lo)
    # g'' + lam g' <= Gamma - L (sin(lo) + slope (g - lo))
    c = rec.ell * slope
    d = -(rec.gamma - rec.ell * math.sin(lo) + rec.ell * slope * lo)
    return SegmentODE(1.0, float(lam), c, d, lo, hi)


def _check_edges(edges) -> tuple[float, ...]:
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or edges[0] != 0.0 or abs(edges[-1] - math.pi) > 1e-15:
        raise ValueError("linearization edges must run from 0 to pi")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("linearization edges must be strictly increasing")
    return edges


@dataclass(frozen=True)
class GronwallCurve:
    """Closed-form upper bound started at time ``t0`` from (y0, y1)."""

    seg: SegmentODE
    y0: float
    y1: float
    t0: float = 0.0

    def __post_init__(self):
        if self.y0 < 0:
            raise ValueError("the bound applies to nonnegative functions (y0 >= 0)")

    @property
    def kind(self) -> str:
        if self.seg.case == "1.1" and self.seg.c == 0:
            return "1.1-c0"
        return self.seg.case

    def value(self, t):
        s = np.asarray(t, dtype=float) - self.t0
        a, b, c, d = self.seg.a, self.seg.b, self.seg.c, self.seg.d
        y0, y1 = self.y0, self.y1
        kind = self.kind
        if kind == "1.1":
            sq = math.sqrt(self.seg.disc)
            v1, v2 = self.seg.v1, self.seg.v2
            k = y1 + v1 * y0 + 2.0 * d / (b - sq)
            # e^{-v2 s} - e^{-v1 s}, written to avoid cancellation near critical damping
            diff = -np.exp(-v2 * s) * np.expm1(-(v1 - v2) * s)
            return (y0 + d / c) * np.exp(-v1 * s) + a * diff / sq * k - d / c
        if kind == "1.1-c0":
            q = y1 + d / b
            return y0 - (a / b) * q * np.expm1(-b * s / a) - (d / b) * s
        if kind == "1.2":
            e = 4.0 * a * d / (b * b)
            w = b * y0 / (2.0 * a) + y1 + 2.0 * d / b
            return np.exp(-b * s / (2.0 * a)) * (y0 + e + w * s) - e
        return -d / (2.0 * a) * s * s + y1 * s + y0

    def rate(self, t):
        s = np.asarray(t, dtype=float) - self.t0
        a, b, c, d = self.seg.a, self.seg.b, self.seg.c, self.seg.d
        y0, y1 = self.y0, self.y1
        kind = self.kind
        if kind == "1.1":
            sq = math.sqrt(self.seg.disc)
            v1, v2 = self.seg.v1, self.seg.v2
            k = y1 + v1 * y0 + 2.0 * d / (b - sq)
            return (-v1 * (y0 + d / c) * np.exp(-v1 * s)
                    + a * k / sq * (-v2 * np.exp(-v2 * s) + v1 * np.exp(-v1 * s)))
        if kind == "1.1-c0":
            q = y1 + d / b
            return q * np.exp(-b * s / a) - d / b
        if kind == "1.2":
            kk = b / (2.0 * a)
            e = 4.0 * a * d / (b * b)
            w = b * y0 / (2.0 * a) + y1 + 2.0 * d / b
            return np.exp(-kk * s) * (w - kk * (y0 + e) - kk * w * s)
        return -d / a * s + y1

    def stationary_times(self) -> list[float]:
        """Absolute times (>= t0) where the closed form has zero slope."""
        a, b, c, d = self.seg.a, self.seg.b, self.seg.c, self.seg.d
        y0, y1 = self.y0, self.y1
        kind = self.kind
        out: list[float] = []
        if kind == "1.1":
            sq = math.sqrt(self.seg.disc)
            v1, v2 = self.seg.v1, self.seg.v2
            q = a * (y1 + v1 * y0 + 2.0 * d / (b - sq)) / sq
            p = (y0 + d / c) - q
            # -v1 p e^{-v1 s} = v2 q e^{-v2 s}
            num, den = -v2 * q, v1 * p
            if den != 0 and num / den > 0 and v2 != v1:
                out.append(math.log(num / den) / (v2 - v1))
        elif kind == "1.1-c0":
            q = y1 + d / b
            if q != 0 and (d / b) / q > 0:
                out.append(-(a / b) * math.log((d / b) / q))
        elif kind == "1.2":
            kk = b / (2.0 * a)
            e = 4.0 * a * d / (b * b)
            w = b * y0 / (2.0 * a) + y1 + 2.0 * d / b
            if w != 0:
                out.append((w - kk * (y0 + e)) / (kk * w))
        elif d != 0:
            out.append(a * y1 / d)
        return [self.t0 + s for s in out if s >= 0 and math.isfinite(s)]


def theorem1_bound(seg: SegmentODE, y0: float, y1: float) -> GronwallCurve:
    """Closed-form upper bound of a y'' + b y' + c y + d <= 0, y(0)=y0, y'(0)=y1."""
    return GronwallCurve(seg, float(y0), float(y1), 0.0)


def _first_hit(curve: GronwallCurve, t_start: float, t_end: float, level: float,
               upward: bool) -> float | None:
    """First time in [t_start, t_end] the curve passes ``level`` in the given direction.

    Each closed form has at most one stationary point, so the curve is
    monotone between the breakpoints and a sign change brackets the root.
    A curve starting on the level and leaving through it returns ~t_start.
    """
    sign = 1.0 if upward else -1.0

    def f(t):
        v = sign * (float(curve.value(t)) - level)
        return v if math.isfinite(v) else math.inf

    # the closed form reproduces y0 at t0 only up to round-off
    f_start = sign * (curve.y0 - level) if t_start == curve.t0 else f(t_start)
    if f_start > 0:
        return t_start
    stops = [t_start] + [s for s in curve.stationary_times() if t_start < s < t_end] + [t_end]
    for lo, hi in zip(stops, stops[1:]):
        f_lo = f_start if lo == t_start else f(lo)
        if f(hi) > 0 >= f_lo:
            while hi - lo > BISECT_TOL:
                mid = 0.5 * (lo + hi)
                if f(mid) > 0:
                    hi = mid
                else:
                    lo = mid
            return hi
    return None


@dataclass(frozen=True)
class SwitchEvent:
    time: float
    boundary: float       # value of g at the switch
    from_segment: int
    to_segment: int
    rate: float           # initial rate used in the new segment

    def as_dict(self) -> dict:
        return dict(time=self.time, boundary=self.boundary, from_segment=self.from_segment,
                    to_segment=self.to_segment, rate=self.rate)


@dataclass(frozen=True)
class Piece:
    curve: GronwallCurve | None      # None for a held (constant) boundary value
    segment: int
    t_start: float
    t_end: float
    hold: float = 0.0

    def value(self, t):
        if self.curve is None:
            return np.full_like(np.asarray(t, dtype=float), self.hold)
        return self.curve.value(t)

    def rate(self, t):
        if self.curve is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return self.curve.rate(t)


@dataclass(frozen=True)
class BoundCurve:
    """Piecewise closed-form upper bound of g = D + Phi over [0, horizon]."""

    pieces: tuple[Piece, ...]
    switches: tuple[SwitchEvent, ...]
    phi: float
    horizon: float
    verdict: str                      # "bounded-below-pi" or "crosses-pi"
    crossing_time: float | None = None
    threshold: float = math.pi        # level of g at which instability is declared
    notes: tuple[str, ...] = field(default=())

    @property
    def t_end(self) -> float:
        return self.crossing_time if self.crossing_time is not None else self.horizon

    def value(self, t):
        """Bound on g at times ``t`` (nan past the crossing time)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.full(t.shape, np.nan)
        for p in self.pieces:
            mask = (t >= p.t_start) & (t <= p.t_end) & np.isnan(out)
            if mask.any():
                out[mask] = p.value(t[mask])
        return out

    def d_value(self, t):
        """Bound on the diameter D = g - Phi."""
        return self.value(t) - self.phi

    def switches_before(self, t: float) -> int:
        return sum(1 for s in self.switches if s.time <= t)

    def as_dict(self) -> dict:
        return {
            "phi": self.phi, "horizon": self.horizon, "verdict": self.verdict,
            "crossing_time": self.crossing_time, "threshold": self.threshold,
            "segments": [
                {"segment": p.segment, "t_start": p.t_start, "t_end": p.t_end,
                 **({"y0": p.curve.y0, "y1": p.curve.y1, "kind": p.curve.kind, **p.curve.seg.as_dict()}
                    if p.curve is not None else {"hold": p.hold})}
                for p in self.pieces
            ],
            "switches": [s.as_dict() for s in self.switches],
            "notes": list(self.notes),
        }

    @classmethod
    def single(cls, seg: SegmentODE, y0: float, y1: float, horizon: float) -> "BoundCurve":
        """Unswitched closed-form curve on [0, horizon], mostly for analysis and tests."""
        curve = theorem1_bound(seg, y0, y1)
        return cls((Piece(curve, 0, 0.0, horizon),), (), 0.0, horizon, "bounded-below-pi",
                   threshold=math.inf)


def propagate_with_switching(env, lam: float, d0: float, ddot0: float, horizon: float = 5.0,
                             edges: Sequence[float] = DEFAULT_EDGES) -> BoundCurve:
    """Upper bound on the post-clearing diameter, switching segments as it evolves.

    Time is measured from fault clearing.  On entering a higher segment the
    initial rate is reset to the clearing rate ``ddot0``; on falling back the
    curve keeps its own rate at the boundary.
    """
    rec = _record(env)
    edges = _check_edges(edges)
    phi = rec.phi
    g0 = d0 + phi
    g_cross = min(math.pi, math.pi + phi)
    if not math.isfinite(g0) or not math.isfinite(ddot0):
        raise ValueError("initial diameter and rate must be finite")
    if g0 >= g_cross:
        return BoundCurve((), (), phi, horizon, "crosses-pi", 0.0, g_cross)
    if g0 < edges[0]:
        raise ValueError(f"initial g = D0 + Phi = {g0:.6g} lies below 0, outside the linearized range")

    k = max(i for i in range(len(edges) - 1) if edges[i] <= g0)
    t0, y0, y1 = 0.0, g0, float(ddot0)
    pieces: list[Piece] = []
    switches: list[SwitchEvent] = []
    notes: list[str] = []
    zero_runs = 0
    g_turn = math.asin(min(1.0, rec.gamma / rec.ell)) if rec.ell > 0 else math.pi / 2
    if ddot0 <= 0 or g0 < g_turn:
        # the clearing-rate reset assumes the diameter is decelerating upward from here
        notes.append("initial state outside the decelerating region; rate reset may be optimistic")
    while True:
        seg = linearize_segment(rec, k, lam, edges)
        curve = GronwallCurve(seg, max(y0, 0.0), y1, t0)
        upper = min(edges[k + 1], g_cross)
        t_up = _first_hit(curve, t0, horizon, upper, upward=True)
        t_down = _first_hit(curve, t0, horizon, edges[k], upward=False) if k > 0 else None
        if t_up is None and t_down is None:
            pieces.append(Piece(curve, k, t0, horizon))
            return BoundCurve(tuple(pieces), tuple(switches), phi, horizon,
                              "bounded-below-pi", None, g_cross, tuple(notes))
        going_up = t_down is None or (t_up is not None and t_up <= t_down)
        t_hit = t_up if going_up else t_down
        pieces.append(Piece(curve, k, t0, t_hit))

        zero_runs = zero_runs + 1 if t_hit - t0 <= BISECT_TOL else 0
        if zero_runs >= 2 or len(switches) >= MAX_SWITCHES:
            level = edges[k + 1] if going_up else edges[k]
            notes.append(f"bound chatters at the segment boundary g = {level:.6g}; held there")
            pieces.append(Piece(None, k, t_hit, horizon, hold=level))
            return BoundCurve(tuple(pieces), tuple(switches), phi, horizon,
                              "bounded-below-pi", None, g_cross, tuple(notes))

        if going_up:
            if upper >= g_cross:
                return BoundCurve(tuple(pieces), tuple(switches), phi, horizon,
                                  "crosses-pi", t_hit, g_cross, tuple(notes))
            switches.append(SwitchEvent(t_hit, edges[k + 1], k, k + 1, float(ddot0)))
            k += 1
            y0, y1 = edges[k], float(ddot0)
        else:
            rate = float(curve.rate(t_hit))
            switches.append(SwitchEvent(t_hit, edges[k], k, k - 1, rate))
            k -= 1
            y0, y1 = edges[k + 1], rate
        t0 = t_hit


@dataclass(frozen=True)
class BoundPeak:
    peak: float          # in g coordinates
    time: float
    crossing_time: float | None

    def d_peak(self, phi: float) -> float:
        return self.peak - phi


def bound_peak(curve: BoundCurve, grid_step: float = 1e-4) -> BoundPeak:
    """Maximum of the bound over its domain, from the closed-form stationary points.

    Falls back to a dense grid when a closed form evaluates non-finite.
    """
    if curve.verdict == "crosses-pi":
        return BoundPeak(curve.threshold, curve.crossing_time, curve.crossing_time)
    best, t_best = -math.inf, 0.0
    for p in curve.pieces:
        cands = [p.t_start, p.t_end]
        if p.curve is not None:
            cands += [s for s in p.curve.stationary_times() if p.t_start <= s <= p.t_end]
        vals = [float(p.value(t)) for t in cands]
        if not all(math.isfinite(v) for v in vals):
            grid = np.arange(p.t_start, p.t_end + grid_step, grid_step)
            grid = grid[grid <= p.t_end]
            cands = list(grid)
            vals = list(p.value(grid))
        for t, v in sorted(zip(cands, vals)):
            if v > best:
                best, t_best = v, t
    return BoundPeak(best, t_best, None)
