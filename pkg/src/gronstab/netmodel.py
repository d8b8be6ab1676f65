"""Network data model, admittance matrices and Kron reduction.

A case is parsed into an immutable :class:`PowerNetwork`. From there the
classical-model pipeline is

    bus admittance (branches + constant-impedance loads)
      -> augmented with generator internal nodes behind x'_d
      -> Kron-reduced onto the internal nodes
      -> swing coefficients a_ij, alpha_ij, Omega_i, lambda

which is what :func:`reduce_to_generators` strings together.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg

BUS_TYPES = ("slack", "pv", "pq")


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case files."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class SingularNetworkError(ValueError):
    """The eliminated block of a Kron reduction is singular."""


class HeterogeneousDampingError(ValueError):
    """D_i/M_i differs between machines; the bound requires a common ratio."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    v_set: float
    p_load: float = 0.0
    q_load: float = 0.0

    @property
    def has_load(self) -> bool:
        return self.p_load != 0.0 or self.q_load != 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    p_mech: float
    m: float
    d: float
    xd_prime: float


@dataclass(frozen=True)
class PowerNetwork:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    freq_hz: float = 60.0

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        seen = set()
        for i in ids:
            if i in seen:
                raise CaseFormatError(f"duplicate bus id {i}")
            seen.add(i)
        for b in self.buses:
            if b.kind not in BUS_TYPES:
                raise CaseFormatError(f"bus {b.id}: unknown type {b.kind!r}")
        n_slack = sum(b.kind == "slack" for b in self.buses)
        if n_slack != 1:
            raise CaseFormatError(f"expected exactly one slack bus, found {n_slack}")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in seen:
                    raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        gen_buses = set()
        for g in self.generators:
            if g.bus not in seen:
                raise CaseFormatError(f"generator references unknown bus {g.bus}")
            if g.bus in gen_buses:
                raise CaseFormatError(f"more than one generator at bus {g.bus}")
            gen_buses.add(g.bus)
            if not g.m > 0:
                raise CaseFormatError(f"generator at bus {g.bus}: inertia m must be positive")
            if not g.xd_prime > 0:
                raise CaseFormatError(f"generator at bus {g.bus}: xd_prime must be positive")
        for b in self.buses:
            if b.kind in ("slack", "pv") and b.id not in gen_buses:
                raise CaseFormatError(f"bus {b.id} is {b.kind} but has no generator")
        if not self.freq_hz > 0 or not self.base_mva > 0:
            raise CaseFormatError("base_mva and freq_hz must be positive")

    @property
    def omega_r(self) -> float:
        return 2.0 * math.pi * self.freq_hz

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def with_branch_reactance(self, from_bus: int, to_bus: int, x: float) -> "PowerNetwork":
        """Copy of the network with one branch's series reactance replaced."""
        hit = False
        branches = []
        for br in self.branches:
            if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
                br = replace(br, x=x)
                hit = True
            branches.append(br)
        if not hit:
            raise KeyError(f"no branch {from_bus}-{to_bus}")
        return replace(self, branches=tuple(branches))

    def with_damping_ratio(self, lam: float) -> "PowerNetwork":
        """Copy of the network with D_i = lam * M_i for every machine."""
        gens = tuple(replace(g, d=lam * g.m) for g in self.generators)
        return replace(self, generators=gens)


# --------------------------------------------------------------------------
# Case-file parsing
# --------------------------------------------------------------------------

_COLUMNS = {
    "bus": (("id", int), ("type", str), ("v_set", float), ("p_load", float), ("q_load", float)),
    "branch": (("from", int), ("to", int), ("r", float), ("x", float), ("b_charging", float)),
    "gen": (("bus", int), ("p_mech", float), ("m", float), ("d", float), ("xd_prime", float)),
}
_SYSTEM_KEYS = {"base_mva": float, "freq_hz": float, "load_model": str}


def parse_case(text: str) -> PowerNetwork:
    """Parse the sectioned plain-text case format (see README)."""
    section = None
    system: dict[str, object] = {}
    rows: dict[str, list[tuple[int, dict]]] = {"bus": [], "branch": [], "gen": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise CaseFormatError("unterminated section header", lineno)
            section = line[1:-1].strip().lower()
            if section != "system" and section not in rows:
                raise CaseFormatError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise CaseFormatError("data outside of any section", lineno)
        if section == "system":
            if "=" not in line:
                raise CaseFormatError("expected 'key = value'", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _SYSTEM_KEYS:
                raise CaseFormatError("unknown system key", lineno, key)
            try:
                system[key] = _SYSTEM_KEYS[key](value)
            except ValueError:
                raise CaseFormatError(f"cannot parse {value!r}", lineno, key) from None
            continue
        cols = _COLUMNS[section]
        tokens = line.split()
        if len(tokens) != len(cols):
            raise CaseFormatError(f"expected {len(cols)} columns in [{section}], got {len(tokens)}", lineno)
        rec = {}
        for tok, (name, conv) in zip(tokens, cols):
            try:
                val = conv(tok)
            except ValueError:
                raise CaseFormatError(f"cannot parse {tok!r}", lineno, name) from None
            if isinstance(val, float) and not math.isfinite(val):
                raise CaseFormatError("non-finite value", lineno, name)
            rec[name] = val
        rows[section].append((lineno, rec))

    load_model = str(system.get("load_model", "impedance")).lower()
    if load_model != "impedance":
        raise CaseFormatError(f"unsupported load model {load_model!r}; only 'impedance' is modelled", field="load_model")

    buses = []
    seen = set()
    for lineno, r in rows["bus"]:
        kind = r["type"].lower()
        if kind not in BUS_TYPES:
            raise CaseFormatError(f"unknown bus type {r['type']!r}", lineno, "type")
        if r["id"] in seen:
            raise CaseFormatError(f"duplicate bus id {r['id']}", lineno, "id")
        seen.add(r["id"])
        buses.append(Bus(r["id"], kind, r["v_set"], r["p_load"], r["q_load"]))
    branches = []
    for lineno, r in rows["branch"]:
        for name in ("from", "to"):
            if r[name] not in seen:
                raise CaseFormatError(f"unknown bus {r[name]}", lineno, name)
        branches.append(Branch(r["from"], r["to"], r["r"], r["x"], r["b_charging"]))
    gens = []
    for lineno, r in rows["gen"]:
        if r["bus"] not in seen:
            raise CaseFormatError(f"unknown bus {r['bus']}", lineno, "bus")
        if not r["m"] > 0:
            raise CaseFormatError("inertia must be positive", lineno, "m")
        if not r["xd_prime"] > 0:
            raise CaseFormatError("transient reactance must be positive", lineno, "xd_prime")
        gens.append(Generator(r["bus"], r["p_mech"], r["m"], r["d"], r["xd_prime"]))

    return PowerNetwork(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        base_mva=float(system.get("base_mva", 100.0)),
        freq_hz=float(system.get("freq_hz", 60.0)),
    )


def load_case(path_or_name: str | Path) -> PowerNetwork:
    """Load a case from a path, or a bundled case by name (e.g. ``"ieee9"``)."""
    p = Path(path_or_name)
    if p.is_file():
        return parse_case(p.read_text())
    name = str(path_or_name)
    bundled = resources.files("gronstab") / "data" / f"{name}.case"
    if bundled.is_file():
        return parse_case(bundled.read_text())
    raise FileNotFoundError(f"no case file or bundled case named {name!r}")


def bundled_cases() -> list[str]:
    root = resources.files("gronstab") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".case"))


# --------------------------------------------------------------------------
# Admittance matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmittanceMatrix:
    """Complex nodal admittance matrix with node labels.

    Bus nodes are labelled by their integer bus id; generator internal
    nodes by ``("E", k)`` with k the generator position in the case.
    """

    y: np.ndarray
    nodes: tuple[Hashable, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=complex)
        if y.ndim != 2 or y.shape[0] != y.shape[1] or y.shape[0] != len(self.nodes):
            raise ValueError("admittance matrix must be square and match the node list")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "index", {n: i for i, n in enumerate(self.nodes)})

    def __getitem__(self, key):
        i, j = key
        return self.y[self.index[i], self.index[j]]

    def submatrix(self, nodes: Sequence[Hashable]) -> np.ndarray:
        idx = [self.index[n] for n in nodes]
        return self.y[np.ix_(idx, idx)]


def internal_node(k: int) -> tuple[str, int]:
    return ("E", k)


def build_admittance(net: PowerNetwork, load_voltages=None) -> AdmittanceMatrix:
    """Bus admittance matrix from branch pi-models.

    If ``load_voltages`` (mapping bus id -> complex voltage, or an array in
    bus order) is given, each load is converted to the constant shunt
    admittance ``(P - jQ)/|V|^2`` and added to its diagonal.
    """
    ids = net.bus_ids
    idx = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        z = complex(br.r, br.x)
        if z == 0:
            raise ValueError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        ys = 1.0 / z
        f, t = idx[br.from_bus], idx[br.to_bus]
        sh = 0.5j * br.b
        y[f, f] += ys + sh
        y[t, t] += ys + sh
        y[f, t] -= ys
        y[t, f] -= ys
    if load_voltages is not None:
        if not isinstance(load_voltages, dict):
            load_voltages = dict(zip(ids, np.asarray(load_voltages)))
        for b in net.buses:
            if not b.has_load:
                continue
            vmag = abs(load_voltages[b.id])
            if vmag == 0:
                raise ValueError(f"zero voltage magnitude at load bus {b.id}")
            y[idx[b.id], idx[b.id]] += complex(b.p_load, -b.q_load) / vmag**2
    return AdmittanceMatrix(y, tuple(ids))


def augment_generators(ybus: AdmittanceMatrix, net: PowerNetwork) -> AdmittanceMatrix:
    """Append one internal node per generator, tied to its terminal via 1/(j x'_d)."""
    n = len(ybus.nodes)
    g = len(net.generators)
    y = np.zeros((n + g, n + g), dtype=complex)
    y[:n, :n] = ybus.y
    for k, gen in enumerate(net.generators):
        yg = 1.0 / complex(0.0, gen.xd_prime)
        t = ybus.index[gen.bus]
        e = n + k
        y[e, e] += yg
        y[t, t] += yg
        y[e, t] -= yg
        y[t, e] -= yg
    nodes = tuple(ybus.nodes) + tuple(internal_node(k) for k in range(g))
    return AdmittanceMatrix(y, nodes)


def ground_nodes(y: AdmittanceMatrix, grounded: Iterable[Hashable], method: str = "exact",
                 shunt: float = 1e6) -> AdmittanceMatrix:
    """Apply solid three-phase faults at the given nodes.

    ``method="exact"`` removes the node (its voltage is pinned to zero);
    ``method="shunt"`` adds a large shunt admittance instead.
    """
    grounded = list(grounded)
    for node in grounded:
        if node not in y.index:
            raise KeyError(f"cannot ground unknown node {node!r}")
    if method == "exact":
        keep = [n for n in y.nodes if n not in set(grounded)]
        return AdmittanceMatrix(y.submatrix(keep), tuple(keep))
    if method == "shunt":
        m = y.y.copy()
        for node in grounded:
            m[y.index[node], y.index[node]] += shunt
        return AdmittanceMatrix(m, y.nodes)
    raise ValueError(f"unknown grounding method {method!r}")


def kron_reduce(y_aug: AdmittanceMatrix, keep: Sequence[Hashable]) -> AdmittanceMatrix:
    """Schur complement Y_kk - Y_ke Y_ee^-1 Y_ek, keeping ``keep`` in the given order."""
    keep = list(keep)
    for node in keep:
        if node not in y_aug.index:
            raise KeyError(f"unknown node {node!r}")
    keep_set = set(keep)
    elim = [n for n in y_aug.nodes if n not in keep_set]
    y_kk = y_aug.submatrix(keep)
    if not elim:
        return AdmittanceMatrix(y_kk.copy(), tuple(keep))
    ki = [y_aug.index[n] for n in keep]
    ei = [y_aug.index[n] for n in elim]
    y_ke = y_aug.y[np.ix_(ki, ei)]
    y_ek = y_aug.y[np.ix_(ei, ki)]
    y_ee = y_aug.y[np.ix_(ei, ei)]
    scale = max(np.abs(y_ee).max(), 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu = scipy.linalg.lu_factor(y_ee)
    pivots = np.abs(np.diag(lu[0]))
    if pivots.min() <= 1e-12 * scale:
        raise SingularNetworkError(
            "eliminated block is singular (an eliminated subnetwork is floating)"
        )
    y_red = y_kk - y_ke @ scipy.linalg.lu_solve(lu, y_ek)
    return AdmittanceMatrix(y_red, tuple(keep))


# --------------------------------------------------------------------------
# Reduced network and swing coefficients
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedNetwork:
    """Generator-only network in swing-equation form.

    theta_i'' + lam * theta_i' = Omega_i + sum_j a_ij sin(theta_j - theta_i + alpha_ij)
    """

    y: np.ndarray
    emf: np.ndarray
    m: np.ndarray
    p_mech: np.ndarray
    a: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    lam: float
    omega_r: float

    @property
    def n(self) -> int:
        return len(self.emf)

    def acceleration(self, theta: np.ndarray) -> np.ndarray:
        """Right-hand side of the swing equation (without the damping term)."""
        diff = theta[None, :] - theta[:, None] + self.alpha
        return self.omega + (self.a * np.sin(diff)).sum(axis=1)

    def electrical_power(self, theta: np.ndarray) -> np.ndarray:
        e = self.emf * np.exp(1j * np.asarray(theta))
        return (e * np.conj(self.y @ e)).real


def derive_coefficients(y_red, emfs, gens: Sequence[Generator], omega_r: float,
                        p_mech=None, rtol: float = 1e-9) -> ReducedNetwork:
    """Fill a_ij, alpha_ij, Omega_i and lambda from a generator-indexed reduced Y."""
    y = np.asarray(y_red.y if isinstance(y_red, AdmittanceMatrix) else y_red, dtype=complex)
    emag = np.abs(np.asarray(emfs))
    if np.any(emag <= 0):
        raise ValueError("internal EMF magnitudes must be positive")
    m = np.array([g.m for g in gens], dtype=float)
    d = np.array([g.d for g in gens], dtype=float)
    pm = np.array([g.p_mech for g in gens], dtype=float) if p_mech is None else np.asarray(p_mech, float)
    if y.shape != (len(m), len(m)):
        raise ValueError("reduced admittance does not match the generator count")

    ratios = d / m
    lam = float(ratios[0])
    for i in range(1, len(ratios)):
        if not math.isclose(ratios[i], lam, rel_tol=rtol):
            raise HeterogeneousDampingError(
                f"D/M differs between machines 0 and {i}: {lam!r} vs {ratios[i]!r}"
            )

    mag = np.abs(y)
    a = omega_r * np.outer(emag, emag) * mag / m[:, None]
    np.fill_diagonal(a, 0.0)
    alpha = np.angle(y) - np.pi / 2
    alpha = np.where(alpha <= -np.pi, alpha + 2 * np.pi, alpha)
    np.fill_diagonal(alpha, 0.0)
    omega = omega_r * (pm - emag**2 * y.diagonal().real) / m
    return ReducedNetwork(y=y, emf=emag, m=m, p_mech=pm, a=a, alpha=alpha,
                          omega=omega, lam=lam, omega_r=omega_r)


def reduce_to_generators(net: PowerNetwork, load_voltages, emfs, p_mech=None,
                         grounded: Iterable[int] = (), ground_method: str = "exact") -> ReducedNetwork:
    """Full classical-model reduction, optionally with solidly grounded buses."""
    ybus = build_admittance(net, load_voltages)
    y_aug = augment_generators(ybus, net)
    grounded = list(grounded)
    # buses with no branch, load or machine carry no current and are dropped
    touched = {b.from_bus for b in net.branches} | {b.to_bus for b in net.branches}
    touched |= {g.bus for g in net.generators}
    isolated = [b.id for b in net.buses if b.id not in touched and not b.has_load
                and b.id not in grounded]
    if isolated:
        y_aug = ground_nodes(y_aug, isolated, method="exact")
    if grounded:
        y_aug = ground_nodes(y_aug, grounded, method=ground_method)
    keep = [internal_node(k) for k in range(len(net.generators))]
    y_red = kron_reduce(y_aug, keep)
    return derive_coefficients(y_red, emfs, net.generators, net.omega_r, p_mech)
