"""Numerical laboratory for the boundary inverse problem of Yang-Mills connections."""

__version__ = "0.1.0"
