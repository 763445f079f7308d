"""Composite API traffic mining, simulation and broken-access-control detection."""

__version__ = "0.1.0"
