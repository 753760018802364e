"""Origin-destination traffic estimation by cross-entropy optimisation.

Subpackages
-----------
graph     complete directed networks, shortest-path routing, arc loads
ce        the cross-entropy loop and importance-sampling estimators
families  sampling densities and their CE parameter updates
odestim   ground-truth simulation and OD estimation
pfilter   particle filtering of packet dynamics
cli       the ``odce`` command-line driver
"""

from .ce import CeConfig, ce_optimize, elite_threshold, rare_event_is
from .graph import Network, arc_index, arc_loads, reduce_system, routing_matrix, shortest_paths
from .odestim import Constraint, CostModel, GroundTruth, estimate, identifiability_report, performance, simulate

__version__ = "0.1.0"

__all__ = [
    "CeConfig",
    "Constraint",
    "CostModel",
    "GroundTruth",
    "Network",
    "arc_index",
    "arc_loads",
    "ce_optimize",
    "elite_threshold",
    "estimate",
    "identifiability_report",
    "performance",
    "rare_event_is",
    "reduce_system",
    "routing_matrix",
    "shortest_paths",
    "simulate",
]
