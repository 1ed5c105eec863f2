"""Robustness of GNNs under homophily and heterophily: theory, models, attacks, defenses, certificates."""

from .errors import HeteroRobustError
from .graph import LabeledGraph, SparseAdjacency, edge_homophily, normalize
from .synth import SynthSpec, stylized_graph

__version__ = "0.1.0"

__all__ = ["HeteroRobustError", "LabeledGraph", "SparseAdjacency", "SynthSpec", "edge_homophily",
           "normalize", "stylized_graph", "__version__"]
