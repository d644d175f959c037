"""Flexible-joint robot simulation and controller-synthesis toolkit.

Plant model, fixed-step closed-loop simulator, two-time-scale torque control,
three predictive (MPC) controller variants over a condensed box-QP, and the
experiment harness (step / smooth step / chirp / impact protocols, validity
and horizon-feasibility sweeps).
"""

from ._backend import BACKEND, using_compiled
from .controllers import (
    Controller,
    ControllerOutput,
    MotorPdController,
    ReferenceSample,
    SpController,
    ZeroController,
)
from .model import FullState, PlantParams
from .mpc import (
    MpcConfig,
    MpcFastController,
    MpcFullController,
    MpcSlowController,
)
from .qp import BoxQp, QpSolution, solve_box_qp
from .scenarios import ScenarioConfig, load_config, run_scenario
from .simulate import (
    ExternalTorqueEvent,
    SimConfig,
    TraceLog,
    run_closed_loop,
    step_rk4,
)
from .sp_core import SpGains, synthesize_gains

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "using_compiled",
    "PlantParams",
    "FullState",
    "SimConfig",
    "TraceLog",
    "ExternalTorqueEvent",
    "run_closed_loop",
    "step_rk4",
    "SpGains",
    "synthesize_gains",
    "Controller",
    "ControllerOutput",
    "ReferenceSample",
    "MotorPdController",
    "SpController",
    "ZeroController",
    "MpcConfig",
    "MpcFastController",
    "MpcSlowController",
    "MpcFullController",
    "BoxQp",
    "QpSolution",
    "solve_box_qp",
    "ScenarioConfig",
    "run_scenario",
    "load_config",
    "__version__",
]
