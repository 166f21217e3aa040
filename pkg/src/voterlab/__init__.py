"""Occupation-time limit theorems for the voter model: simulation and checks."""

__version__ = "0.1.0"
