"""Environments: quarter-disc grid, Euclidean diffusion chain, torus."""

from .base import ContractError, Environment, PolicyDiverged, Trajectory, TrajectoryBatch, trajectory_log_terms
from .euclid import TARGETS, EuclidEnv
from .quarterdisc import QuarterDiscEnv
from .torus import TorusEnv

__all__ = [
    "ContractError",
    "Environment",
    "PolicyDiverged",
    "Trajectory",
    "TrajectoryBatch",
    "trajectory_log_terms",
    "QuarterDiscEnv",
    "EuclidEnv",
    "TorusEnv",
    "TARGETS",
]
