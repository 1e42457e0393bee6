"""Condensation and selective-replay continual learning for dynamic graphs."""

__version__ = "0.1.0"
