"""Deterministic analysis, diffing and compliance checking for automotive class models."""

__version__ = "0.1.0"
