"""Curvature-routed mixture of Euclidean, hyperbolic and spherical graph
experts for node classification, built on numpy and scipy."""

from .curvature import CurvatureConfig, CurvatureMap, compute_all, edge_orc
from .graph import Graph, SyntheticSpec, generate_synthetic, load_edge_list
from .manifolds import EUCLIDEAN, POINCARE, SPHERE, ManifoldSpec
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
