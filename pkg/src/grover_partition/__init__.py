"""Grover search for number partitioning with a generalized phase-step oracle."""

__version__ = "0.1.0"
