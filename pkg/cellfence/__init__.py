"""Uplink monitoring and geofencing pipeline for LTE connection establishment."""

__version__ = "0.1.0"
