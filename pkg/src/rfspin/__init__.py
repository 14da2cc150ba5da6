"""Desk-scale toolkit for disordered lattice spin systems."""

__version__ = "0.1.0"
