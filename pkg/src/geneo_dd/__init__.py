"""Overlapping Schwarz solvers with spectral coarse spaces for heterogeneous elasticity and diffusion."""

__version__ = "0.1.0"
