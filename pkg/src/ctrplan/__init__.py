"""Concentric tube robot path planning from labelled point clouds.

Subpackages are imported lazily by the CLI; the planner pulls in jax, so
``import ctrplan`` alone stays light.
"""
__version__ = "0.1.0"
