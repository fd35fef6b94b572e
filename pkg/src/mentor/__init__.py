"""Three-channel graph neural model for team (subgraph) classification."""

from .config import TrainConfig
from .graph import Direction, Graph, Team, TeamSet, WeightedHypergraph, build_graph, degree, shortest_paths
from .model import Model, gini, node_importance
from .preprocess import collapse_hypergraph, isolate_teams, sample_anchor_sets

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "Direction",
    "Graph",
    "Team",
    "TeamSet",
    "WeightedHypergraph",
    "build_graph",
    "degree",
    "shortest_paths",
    "Model",
    "gini",
    "node_importance",
    "collapse_hypergraph",
    "isolate_teams",
    "sample_anchor_sets",
]
