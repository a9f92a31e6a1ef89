"""Piecewise-affine surrogates in min-of-max form and the minimiser radii they certify."""
__version__ = "0.1.0"
