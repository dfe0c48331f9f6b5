"""Prioritized selection with FDR control for heteroscedastic units."""

__version__ = "0.1.0"
