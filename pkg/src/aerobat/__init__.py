"""Multibody simulator and gait optimizer for a linkage-driven flapping-wing robot."""

__version__ = "0.1.0"
