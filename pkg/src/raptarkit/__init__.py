"""Hardware-free robotic antenna pattern acquisition toolkit."""

__version__ = "0.1.0"
