"""Finite-dimensional models of L^p modules, Fock representations and crossed products."""

__version__ = "0.1.0"
