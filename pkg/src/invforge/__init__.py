"""Polynomial invariant generation for hybrid systems with exact rational certificates."""

__version__ = "0.1.0"
