"""RIS-assisted physical-layer group key generation."""
__version__ = "0.1.0"
