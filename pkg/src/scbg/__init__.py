"""Socially-controllable behavior generation on synthetic two-agent traffic scenarios."""

__version__ = "0.1.0"
