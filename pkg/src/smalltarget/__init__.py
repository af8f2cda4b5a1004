"""Multispectral small-target detection with selective state-space scanning."""

__version__ = "0.1.0"
