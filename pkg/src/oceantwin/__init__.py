"""Digital-twin synchronization middleware over a simulated acoustic network."""

__version__ = "0.1.0"
