"""Quantum-secured self-homodyne coherent link modelling over multicore fiber."""
__version__ = "0.1.0"
