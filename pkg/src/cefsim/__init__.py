"""Collision-exposure-aware fault injection for robot collision-detection memories."""

__version__ = "0.1.0"
