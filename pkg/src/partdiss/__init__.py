"""Spectral simulation of stochastic partly dissipative systems."""
from __future__ import annotations

__version__ = "0.1.0"
