"""Numerical laboratory for pairs of contact forms on 3-manifold charts."""

__version__ = "0.1.0"
