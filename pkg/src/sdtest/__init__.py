"""Robust composite-hypothesis tests built on the S-divergence family."""

__version__ = "0.1.0"
