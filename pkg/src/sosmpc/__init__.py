"""Hierarchical coordination of distributed MPC via parametric slicing."""

__version__ = "0.1.0"
