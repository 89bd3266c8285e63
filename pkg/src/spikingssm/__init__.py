"""Spiking state space models with parallel spike prediction by a surrogate dynamic network."""

__version__ = "0.1.0"
