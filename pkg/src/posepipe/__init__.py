"""Probabilistic category-level 6D pose pipeline."""

__version__ = "0.1.0"
