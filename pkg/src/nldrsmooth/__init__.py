"""Linear-smoother view of local spectral dimensionality reduction."""

__version__ = "0.1.0"
