"""Built-in objectives: the Eggholder cut and the NMPC cost at zero angle.

Both evaluators follow the scalar-field convention (an ``(N, n)`` array in,
``N`` values out) and also accept plain scalars or single points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainViolationError, InputError
from .mmps import AffineMap, ConvexSegment, MmpsFunction
from .polytope import Polytope

EGGHOLDER_BOUNDS = (-512.0, 512.0)
NMPC_BOX = 20.0
# segment breakpoints of the five-region Eggholder partition
EGGHOLDER_PARTITION = (-512.0, -385.0, -330.0, -180.0, 180.0, 512.0)
EGGHOLDER_PIECES = (3, 1, 3, 3, 1)
C3 = (-330.0, -180.0)


def _check_box(x, lo, hi, what):
    tol = 1e-9 * (hi - lo)
    bad = (x < lo - tol) | (x > hi + tol)
    if np.any(bad):
        raise DomainViolationError(f"{what} outside [{lo}, {hi}]: {np.asarray(x)[bad].ravel()[0]}")


def eggholder_1d(x):
    """Cut of the Eggholder function along ``x2 = 0`` (radians)."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[:, 0]
    _check_box(x, *EGGHOLDER_BOUNDS, "x")
    y = -47.0 * np.sin(np.sqrt(np.abs(x / 2 + 47.0))) - x * np.sin(np.sqrt(np.abs(x - 47.0)))
    return float(y) if scalar else y


def nmpc_objective(u_k, u_k1=None):
    """Two-step NMPC cost at zero pendulum angle, inputs boxed by 20 N.

    Call as ``nmpc_objective(u_k, u_k1)`` or with one ``(N, 2)`` array.
    """
    if u_k1 is None:
        U = np.atleast_2d(np.asarray(u_k, dtype=float))
        if U.shape[1] != 2:
            raise InputError("expected points of dimension 2")
        a, b = U[:, 0], U[:, 1]
        scalar = np.ndim(u_k) == 1
    else:
        a, b = np.asarray(u_k, dtype=float), np.asarray(u_k1, dtype=float)
        scalar = a.ndim == 0 and b.ndim == 0
    _check_box(a, -NMPC_BOX, NMPC_BOX, "u_k")
    _check_box(b, -NMPC_BOX, NMPC_BOX, "u_k+1")
    pi = np.pi
    y = (np.sqrt((0.02 * a + pi) ** 2 + 2 * pi ** 2)
         + 0.02 * np.sqrt(a ** 2 + (a + b) ** 2)
         + 0.01 * np.sqrt(a ** 2 + b ** 2))
    return float(np.ravel(y)[0]) if scalar else y


@dataclass(frozen=True)
class BenchFunction:
    name: str
    dimension: int
    domain: Polytope
    evaluator: Callable

    def __call__(self, X):
        return self.evaluator(X)


REGISTRY = {
    "eggholder1d": BenchFunction("eggholder1d", 1, Polytope.interval(*EGGHOLDER_BOUNDS),
                                 eggholder_1d),
    "nmpc-theta0": BenchFunction("nmpc-theta0", 2,
                                 Polytope.box([-NMPC_BOX] * 2, [NMPC_BOX] * 2),
                                 nmpc_objective),
}


def get_bench(name: str) -> BenchFunction:
    try:
        return REGISTRY[name]
    except KeyError:
        raise InputError(f"unknown function {name!r}; known: {sorted(REGISTRY)}") from None


# printed surrogates of the Eggholder cut on [-330, -180]
SURROGATES = {
    "f3-1": ([-7.8, -0.9, 6.1], [-2365.7, -501.2, 1176.1]),
    "f3-2": ([-8.6, -6.8, -4.6, -2.2, 0.3, 2.8, 5.1, 6.9],
             [-2613.1, -2095.6, -1477.9, -829.8, -191.6, 412.5, 944.0, 1348.1]),
}


def reference_segment(name: str) -> ConvexSegment:
    try:
        slopes, intercepts = SURROGATES[name]
    except KeyError:
        raise InputError(f"unknown reference surrogate {name!r}") from None
    pieces = [AffineMap([a], b) for a, b in zip(slopes, intercepts)]
    return ConvexSegment(pieces, Polytope.interval(*C3))


def reference_surrogate(name: str) -> MmpsFunction:
    seg = reference_segment(name)
    return MmpsFunction([seg], seg.region)


def partition_1d(edges) -> list[Polytope]:
    return [Polytope.interval(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
