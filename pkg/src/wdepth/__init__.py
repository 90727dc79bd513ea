"""Entanglement-depth certification from heralded photon statistics."""

__version__ = "0.1.0"
