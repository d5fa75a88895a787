"""Homogenization of oscillating surfaces: limits, metrics and spectra."""

__version__ = "0.1.0"
