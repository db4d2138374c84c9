"""Adaptive attacks on graph transformers via continuous relaxations."""

__version__ = "0.1.0"
