"""Finite-difference workbench for uniformly degenerate elliptic Dirichlet problems."""

__version__ = "0.1.0"
