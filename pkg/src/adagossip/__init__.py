"""Desk-scale laboratory for decentralized adaptive-gradient training.

Agents run several local Adam-family steps between compressed gossip rounds
over a mixing topology; the package records everything needed to check the
consensus and step-size conditions that make that schedule sound.
"""

from .compression import CompressorSpec, certify_contraction, compress, eta_of
from .engine import RunConfig, RunRecord, run
from .localopt import OptimizerSpec
from .problems import PartitionPlan, ProblemSet, make_problem
from .topology import Graph, MixingMatrix, build_topology

__all__ = [
    "CompressorSpec",
    "OptimizerSpec",
    "PartitionPlan",
    "ProblemSet",
    "Graph",
    "MixingMatrix",
    "RunConfig",
    "RunRecord",
    "build_topology",
    "certify_contraction",
    "compress",
    "eta_of",
    "make_problem",
    "run",
]

__version__ = "0.1.0"
