"""Ensemble face presentation-attack detection."""

__version__ = "0.1.0"
