"""Closed-loop simulator and master controller for an automated drip-irrigation line."""

__version__ = "0.1.0"
