"""Particle model predictive control with a tunable consensus horizon."""

__version__ = "0.1.0"
