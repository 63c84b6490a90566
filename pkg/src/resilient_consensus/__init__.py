"""Two-layer resilient leader-follower consensus under bounded FDI attacks."""
from .attack import AttackModel
from .design import LayerDesign, TriggerParams, build_design, default_c_constants, params_validate
from .experiment import Scenario, run_scenario, sweep_beta, mean_state_trace
from .simulator import SimConfig, run
from .topology import AgentGraph, LayerPair, system_matrix
from .triggers import TriggerMode

__all__ = [
    "AgentGraph", "LayerPair", "system_matrix",
    "LayerDesign", "TriggerParams", "build_design", "default_c_constants", "params_validate",
    "AttackModel", "TriggerMode", "SimConfig", "run",
    "Scenario", "run_scenario", "sweep_beta", "mean_state_trace",
]
__version__ = "0.1.0"
