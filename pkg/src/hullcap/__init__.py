"""Outward minimising hulls, p-capacities and their limit, with radial and isoperimetric checks."""
__version__ = "0.1.0"
