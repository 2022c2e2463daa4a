"""Decoherence with a hidden density part, and Brownian reduction on the
probability simplex."""

__version__ = "0.1.0"
