"""Numerical Morse-index laboratory for complete minimal surfaces of finite total curvature."""

__version__ = "0.1.0"
