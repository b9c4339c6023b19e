"""Neural and grid solvers for Hamilton-Jacobi-Isaacs reachability."""

from .systems import SystemSpec, Orientation, make_system
from .valuenet import NetworkParams, NormalizationMap
from .trainer import TrainSchedule, train
from .gridsolver import ValueGrid, solve
from .rollout import Trajectory, FilterPolicy, simulate_optimal, simulate_filtered

__all__ = [
    "SystemSpec", "Orientation", "make_system", "NetworkParams", "NormalizationMap",
    "TrainSchedule", "train", "ValueGrid", "solve", "Trajectory", "FilterPolicy",
    "simulate_optimal", "simulate_filtered",
]
__version__ = "0.1.0"
