"""Bulk-surface parabolic solver with an LOD space for heterogeneous
dynamic boundary conditions."""

__version__ = "0.1.0"
