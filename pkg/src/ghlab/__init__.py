"""Numerical laboratory for Kobayashi geodesics on strongly pseudoconvex domains."""

__version__ = "0.1.0"
