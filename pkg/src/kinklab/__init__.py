"""Numerical laboratory for kink clusters of scalar field equations in one space dimension."""
__version__ = "0.1.0"
