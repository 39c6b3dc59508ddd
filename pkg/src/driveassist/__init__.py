"""Closed-loop conversational driver assistance on a simulated vehicle."""

__version__ = "0.1.0"
