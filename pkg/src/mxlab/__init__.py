"""Desk-scale laboratory for 3D (space, frequency, slot) channel extrapolation
in TDD mmWave massive-MIMO OFDM systems."""

__version__ = "0.1.0"
