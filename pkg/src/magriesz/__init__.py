"""Lattice magnetic Schrodinger operators, weights, gauges and Riesz-transform norms."""

__version__ = "0.1.0"
