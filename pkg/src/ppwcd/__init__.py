"""Coupled-dipole modeling and design of parallel-plate-fed metasurface antennas."""

__version__ = "0.1.0"
