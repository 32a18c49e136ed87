"""Simulation and protocol toolkit for a dual-mode (grayscale + duty-cycled colour) camera."""

__version__ = "0.1.0"
