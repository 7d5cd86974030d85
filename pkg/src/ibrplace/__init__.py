"""Placement of inverter-based resources by resistance distance, with transient validation."""

__version__ = "0.1.0"
