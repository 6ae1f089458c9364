"""Semiclassical Birkhoff normal forms for magnetic Schrödinger operators."""

__version__ = '0.4.0'
