"""Boost converter simulation with an HDP neuro-controller and a PI baseline."""

__version__ = "0.1.0"
