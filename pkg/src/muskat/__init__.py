"""Numerical lab for the two-dimensional Muskat problem."""
__version__ = "0.1.0"
