"""Separable contraction certificates for monotone networked systems."""

__version__ = "0.1.0"
