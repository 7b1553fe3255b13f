"""Derandomized Cox knockoffs with k-FWER control."""
__version__ = "0.1.0"
