"""Continuous-state flow network samplers: losses, environments, evaluation and exact oracles."""

__version__ = "0.1.0"
