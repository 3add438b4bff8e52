"""Finite-volume numerical laboratory for random Schrödinger operators."""

__version__ = "0.1.0"
