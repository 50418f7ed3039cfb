"""Two-level Schwarz solvers for the 2D Helmholtz wave guide with a DtN coarse space."""

__version__ = "0.1.0"
