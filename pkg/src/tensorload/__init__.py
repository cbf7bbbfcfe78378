"""Composite load parameter estimation with tensor-train Fokker-Planck densities."""

from .load_model import (
    PARAM_NAMES,
    STATE_NAMES,
    REFERENCE_PARAMS,
    BusMeasurement,
    CompositeLoadParams,
    MotorState,
    find_equilibrium,
    read_trace,
    simulate_response,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "PARAM_NAMES", "STATE_NAMES", "REFERENCE_PARAMS", "BusMeasurement", "CompositeLoadParams",
    "MotorState", "find_equilibrium", "read_trace", "simulate_response", "write_trace",
]
