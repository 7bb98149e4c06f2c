"""Closed-loop simulation and control for variable-tilt multirotors.

Modules:
  geometry    SO(3) helpers (hat/vee, exp, error maps)
  vehicle     parameters, channel vector, wrench allocation
  simulation  rigid body + first-order actuators, RK4, tethered payload
  controller  geometric PID wrench law + actuator-dynamics backstepping
  estimation  wrench / rotor-thrust reconstruction from IMU signals
  stability   gain certification, Lyapunov evaluation, robustness constants
  harness     scenario configs, experiment runner, metrics, comparisons
  cli         `tiltctl run | certify | compare`
"""

from .vehicle import VehicleParams, ActuatorState, Wrench
from .controller import Gains, Reference, BackstepController, BaselineController
from .simulation import RigidState, SimConfig, DisturbanceProfile, TetherConfig
from .harness import Scenario, run_scenario, compare_controllers, load_scenario

__all__ = [
    "VehicleParams", "ActuatorState", "Wrench", "Gains", "Reference",
    "BackstepController", "BaselineController", "RigidState", "SimConfig",
    "DisturbanceProfile", "TetherConfig", "Scenario", "run_scenario",
    "compare_controllers", "load_scenario",
]

__version__ = "0.1.0"
