"""Simulation and optimal control of cavity-driven dynamic nuclear polarization."""

__version__ = "0.1.0"
