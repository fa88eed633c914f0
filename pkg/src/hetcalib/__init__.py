"""Calibration of inexact computer models under heteroscedastic replicated noise."""

__version__ = "0.1.0"
