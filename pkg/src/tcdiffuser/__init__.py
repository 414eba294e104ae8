"""Trajectory diffusion with historical, immediate and prospective temporal conditions."""

__version__ = "0.1.0"
