"""Scalar-field calling convention.

A scalar field is any callable mapping an ``(N, n)`` array of points to an
array of ``N`` values. Callables that only handle one point at a time are
tolerated through a slow row-by-row fallback.
"""
import numpy as np

from .errors import EvaluationError


def field_values(F, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    try:
        vals = np.asarray(F(X), dtype=float).ravel()
        if vals.shape != (len(X),):
            raise ValueError("shape")
    except (TypeError, ValueError):
        vals = np.array([float(np.asarray(F(x), dtype=float).ravel()[0]) for x in X])
    bad = ~np.isfinite(vals)
    if bad.any():
        pt = X[np.argmax(bad)]
        raise EvaluationError(f"objective is not finite at {pt.tolist()}", point=pt.tolist())
    return vals
