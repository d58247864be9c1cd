"""Numerical toolkit for the Boltzmann-Grad limit of the 2D periodic Lorentz gas."""

__version__ = "0.1.0"
