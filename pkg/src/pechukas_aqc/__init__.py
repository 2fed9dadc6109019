"""Adiabatic quantum evolution simulated as a Pechukas gas."""

__version__ = "0.1.0"
