"""Gridworld-RTS reinforcement learning with auxiliary-policy action guidance."""

__version__ = "0.1.0"
