"""Simulation and benchmarking of blended gait-phase exoskeleton assistance."""

__version__ = "0.1.0"
