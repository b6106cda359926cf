"""Gaussian-beam quasimodes for Bloch electrons in a weak constant magnetic field."""

__version__ = "0.1.0"
