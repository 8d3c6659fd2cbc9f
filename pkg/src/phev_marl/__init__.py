"""Multi-mode plug-in hybrid powertrain simulator with cooperative DDPG agents."""

from .drivecycle import DriveCycle, build_learning_cycle, canonical_cycle, load_cycle
from .environment import ActionMulti, ActionSingle, PhevEnv, RewardSpec, fuel_saving, handshake, soc_error
from .powertrain import BatterySpec, Mode, VehicleConfig, default_specs
from .trainer import ExperimentConfig, evaluate, sweep_rind, train

__version__ = "0.1.0"

__all__ = [
    "ActionMulti", "ActionSingle", "BatterySpec", "DriveCycle", "ExperimentConfig", "Mode", "PhevEnv",
    "RewardSpec", "VehicleConfig", "build_learning_cycle", "canonical_cycle", "default_specs", "evaluate",
    "fuel_saving", "handshake", "load_cycle", "soc_error", "sweep_rind", "train",
]
