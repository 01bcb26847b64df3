"""hp finite elements on geometric boundary-refined meshes for the integral fractional Laplacian."""

__version__ = "0.1.0"
