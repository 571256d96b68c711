"""Multiscale finite element solver for nonlocal hydrodynamic Drude arrays."""

__version__ = "0.1.0"
