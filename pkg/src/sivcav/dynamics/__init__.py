"""Driven-dissipative few-level dynamics: Lindblad engine and experiment models."""

from .engine import (
    Level,
    Drive,
    Decay,
    Dephasing,
    LevelSystem,
    DensityState,
    Trace,
    build_liouvillian,
    evolve,
    evolve_with_final,
    final_state,
    steady_state,
)
from .experiments import (
    SpinPumpParams,
    CptParams,
    PleEmitter,
    simulate_spin_pumping,
    extract_initialization_fidelity,
    simulate_t1_recovery,
    simulate_cpt_scan,
    fit_cpt_scan_forward,
    simulate_ple_scan,
)

__all__ = [
    "Level", "Drive", "Decay", "Dephasing", "LevelSystem", "DensityState",
    "Trace", "build_liouvillian", "evolve", "evolve_with_final", "final_state",
    "steady_state",
    "SpinPumpParams", "CptParams", "PleEmitter",
    "simulate_spin_pumping", "extract_initialization_fidelity",
    "simulate_t1_recovery", "simulate_cpt_scan", "fit_cpt_scan_forward",
    "simulate_ple_scan",
]
