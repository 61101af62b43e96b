"""Closed-loop multistatic radar tracking in urban terrain."""

__version__ = "0.1.0"
