"""Launchpad bonding-curve mechanics and graduation analytics."""

__version__ = "0.1.0"
