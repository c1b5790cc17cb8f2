"""Desk-scale laboratory for ML-based selection of simulated self-driving-car tests."""

__version__ = "0.1.0"
