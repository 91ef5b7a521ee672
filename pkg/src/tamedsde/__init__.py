"""Tamed and positivity-preserving schemes for SDEs with non-globally-monotone coefficients."""

__version__ = "0.1.0"
