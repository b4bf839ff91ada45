"""Numerical laboratory for recovering tetrahedral interfaces with
piecewise-constant Helmholtz potentials from Dirichlet-to-Neumann
boundary data."""

__version__ = "0.1.0"
