"""Simulation and control of fully-actuated tilt-rotor quadrotors."""

from omnirotor.configuration import ConfigId, VehicleParams, NOMINAL_PARAMS
from omnirotor.dynamics import ActuatorCommand, EulerState, UncertaintySpec
from omnirotor.scenarios import ManeuverId, ScenarioSpec, SimLog, run_simulation

__all__ = [
    "ActuatorCommand",
    "ConfigId",
    "EulerState",
    "ManeuverId",
    "ScenarioSpec",
    "SimLog",
    "NOMINAL_PARAMS",
    "UncertaintySpec",
    "VehicleParams",
    "run_simulation",
]

__version__ = "0.1.0"
