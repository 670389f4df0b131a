"""Parametric expressive body-and-head model toolkit."""

__version__ = "0.1.0"
