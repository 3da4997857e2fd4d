"""Desk-scale laboratory for diverse trajectory generation on 2D grids."""

__version__ = "0.1.0"
