"""Lipschitz-minimal interpolation: certified networks, training, bounds."""

__version__ = "0.1.0"
