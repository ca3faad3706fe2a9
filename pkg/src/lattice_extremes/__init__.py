"""Extremes of stationary regularly varying fields observed on irregular index sets of Z^k."""

__version__ = "0.1.0"
