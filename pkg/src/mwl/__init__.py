"""Witten-deformed A-infinity products versus Morse flow trees on the circle."""

__version__ = "0.1.0"
