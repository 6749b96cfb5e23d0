"""Quantum multi-agent reinforcement learning with pole memories."""

__version__ = "0.1.0"
