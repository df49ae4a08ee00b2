"""Quantum fast weight programmers: classical slow programmers driving VQC angles."""

__version__ = "0.1.0"
