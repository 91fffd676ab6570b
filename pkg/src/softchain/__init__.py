"""softchain: lumped-parameter soft-robot simulation and grasping analysis."""

__version__ = "0.1.0"
