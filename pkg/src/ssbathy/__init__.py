"""Sidescan sonar simulation, seafloor normal estimation, and neural bathymetry."""

__version__ = "0.1.0"
