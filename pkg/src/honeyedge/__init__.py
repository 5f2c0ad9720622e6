"""Spectral computations for honeycomb Schrödinger operators with line defects."""

__version__ = "0.1.0"
