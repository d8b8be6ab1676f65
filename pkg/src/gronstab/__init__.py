"""Transient stability screening with a Gronwall-type bound on the rotor-angle diameter."""

from .assess import Study, certify, estimate_cct, margin_index, sweep
from .dynamics import FaultScenario, diameter, simulate_fault
from .envelope import envelope_params, verify_envelope
from .gronwall import bound_peak, propagate_with_switching, theorem1_bound
from .netmodel import load_case, parse_case, reduce_to_generators
from .powerflow import init_classical, solve_power_flow

__version__ = "0.1.0"

__all__ = [
    "FaultScenario", "Study", "bound_peak", "certify", "diameter", "envelope_params",
    "estimate_cct", "init_classical", "load_case", "margin_index", "parse_case",
    "propagate_with_switching", "reduce_to_generators", "simulate_fault", "solve_power_flow",
    "sweep", "theorem1_bound", "verify_envelope",
]
