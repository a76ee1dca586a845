"""Lozenge-tiling growth and equilibrium dynamics with their continuum limits."""

__version__ = "0.1.0"
