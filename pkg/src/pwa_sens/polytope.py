"""Halfspace-represented polytopes at desk scale (dimension <= 4).

A :class:`Polytope` is the set ``{x : A @ x <= b}``. Rows are normalised to
unit length on construction so that every tolerance below is a Euclidean
distance. Vertex enumeration is brute force over ``n``-subsets of the
halfspaces, which is fine for the handful of facets met in practice.
"""
from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import pdist

from .errors import EmptyRegionError, InputError, UnboundedRegionError

FEAS_TOL = 1e-8
MAX_VERTEX_DIM = 4


class Polytope:
    """Intersection of halfspaces ``normal @ x <= offset``.

    Instances are treated as immutable; vertices, bounding box and diameter
    are computed on first access and cached.
    """

    def __init__(self, normals, offsets):
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float)).ravel()
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise InputError(
                f"halfspace normals {A.shape} do not match offsets {b.shape}")
        if A.shape[1] == 0:
            raise InputError("polytope dimension must be at least 1")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputError("halfspace data must be finite")
        norms = np.linalg.norm(A, axis=1)
        scale = np.where(norms > 0, norms, 1.0)
        self.A = A / scale[:, None]
        self.b = b / scale
        self.A.setflags(write=False)
        self.b.setflags(write=False)

    # -- constructors -----------------------------------------------------
    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape:
            raise InputError("box bounds must have equal shapes")
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def interval(cls, lower: float, upper: float) -> "Polytope":
        return cls.box([lower], [upper])

    @classmethod
    def from_halfspaces(cls, pairs) -> "Polytope":
        """Build from ``[[normal...], offset]`` pairs (the JSON layout)."""
        try:
            normals = [list(map(float, normal)) for normal, _ in pairs]
            offsets = [float(offset) for _, offset in pairs]
        except (TypeError, ValueError) as exc:
            raise InputError(f"malformed halfspace list: {exc}") from exc
        if not normals:
            raise InputError("a polytope needs at least one halfspace")
        dims = {len(nrm) for nrm in normals}
        if len(dims) != 1:
            raise InputError("halfspace normals have inconsistent dimensions")
        return cls(normals, offsets)

    def to_halfspaces(self) -> list:
        return [[row.tolist(), float(off)] for row, off in zip(self.A, self.b)]

    # -- basic queries ----------------------------------------------------
    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def halfspaces(self):
        return list(zip(self.A, self.b))

    def __repr__(self):
        return f"Polytope(dim={self.dim}, halfspaces={len(self.b)})"

    def contains(self, points, tol: float = FEAS_TOL):
        """Membership test; accepts one point or an ``(N, n)`` array."""
        X = np.asarray(points, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise InputError(
                f"point dimension {X.shape[1]} != polytope dimension {self.dim}")
        inside = np.all(X @ self.A.T <= self.b + tol, axis=1)
        return bool(inside[0]) if single else inside

    def intersect(self, other: "Polytope") -> "Polytope":
        _check_same_dim(self, other)
        return Polytope(np.vstack([self.A, other.A]),
                        np.concatenate([self.b, other.b]))

    def add_halfspace(self, normal, offset) -> "Polytope":
        return Polytope(np.vstack([self.A, np.atleast_2d(normal)]),
                        np.concatenate([self.b, [offset]]))

    # -- cached geometry --------------------------------------------------
    @cached_property
    def is_empty(self) -> bool:
        return not is_feasible(self)

    @cached_property
    def bounds(self):
        """Axis-aligned bounding box ``(lower, upper)``."""
        if self.is_empty:
            raise EmptyRegionError("empty polytope has no bounding box")
        if self.dim == 1:
            lo, hi = _interval_bounds(self.A[:, 0], self.b)
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise UnboundedRegionError("interval is unbounded")
            return np.array([lo]), np.array([hi])
        lower = np.empty(self.dim)
        upper = np.empty(self.dim)
        for k in range(self.dim):
            for sign, out in ((1.0, lower), (-1.0, upper)):
                c = np.zeros(self.dim)
                c[k] = sign
                res = linprog(c, A_ub=self.A, b_ub=self.b,
                              bounds=[(None, None)] * self.dim, method="highs")
                if res.status == 3:
                    raise UnboundedRegionError(
                        f"polytope is unbounded along axis {k}")
                if res.status != 0:
                    raise EmptyRegionError("bounding-box LP failed: " + res.message)
                out[k] = res.x[k]
        return lower, upper

    @cached_property
    def vertices(self) -> np.ndarray:
        """Vertex array of shape ``(V, n)``."""
        self.bounds  # raises for empty or unbounded input
        if self.dim == 1:
            lo, hi = self.bounds
            pts = [lo, hi] if hi[0] > lo[0] else [lo]
            return np.array(pts)
        if self.dim > MAX_VERTEX_DIM:
            raise InputError(
                f"vertex enumeration supports dim <= {MAX_VERTEX_DIM}")
        return _enumerate_vertices(self.A, self.b)

    @cached_property
    def diameter(self) -> float:
        if self.dim == 1:
            lo, hi = self.bounds
            return float(hi[0] - lo[0])
        V = self.vertices
        if len(V) < 2:
            return 0.0
        return float(pdist(V).max())

    @cached_property
    def chebyshev_radius(self) -> float:
        """Radius of the largest inscribed ball (0 for flat or empty sets)."""
        if self.is_empty:
            return 0.0
        return _max_inset(self.A, self.b)


def _check_same_dim(a: Polytope, b: Polytope):
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _interval_bounds(a, b):
    lo, hi = -np.inf, np.inf
    pos, neg = a > 0, a < 0
    if pos.any():
        hi = np.min(b[pos] / a[pos])
    if neg.any():
        lo = np.max(b[neg] / a[neg])
    return lo, hi


def _enumerate_vertices(A, b):
    n = A.shape[1]
    usable = np.nonzero(np.linalg.norm(A, axis=1) > 0)[0]
    combos = np.array(list(itertools.combinations(usable, n)))
    if combos.size == 0:
        return np.empty((0, n))
    M = A[combos]
    rhs = b[combos]
    det = np.linalg.det(M)
    ok = np.abs(det) > 1e-12
    pts = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    tol = FEAS_TOL * max(1.0, float(np.abs(b).max()))
    feasible = np.all(pts @ A.T <= b + tol, axis=1)
    pts = pts[feasible]
    if len(pts) == 0:
        # flat polytope whose vertices are not cut out by n independent rows
        return np.empty((0, n))
    keep = []
    for p in pts:
        if not any(np.linalg.norm(p - q) <= 1e-9 * max(1.0, np.abs(p).max())
                   for q in keep):
            keep.append(p)
    return np.array(keep)


def _max_inset(A, b):
    # max t  s.t.  A x + t <= b, t <= 1   (rows are unit length)
    n = A.shape[1]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * n + [(None, 1.0)],
                  method="highs")
    if res.status != 0:
        return 0.0
    return max(0.0, float(res.x[-1]))


def is_feasible(poly: Polytope, tol: float = FEAS_TOL) -> bool:
    """True iff the halfspace system admits a point (phase-one LP)."""
    A, b = poly.A, poly.b
    zero = np.linalg.norm(A, axis=1) == 0
    if np.any(b[zero] < -tol):
        return False
    if poly.dim == 1:
        lo, hi = _interval_bounds(A[:, 0], b)
        return bool(lo <= hi + tol)
    res = linprog(np.zeros(poly.dim), A_ub=A, b_ub=b + tol,
                  bounds=[(None, None)] * poly.dim, method="highs")
    return res.status in (0, 3)


def diameter(poly: Polytope) -> float:
    """Largest distance between two points of a bounded, non-empty polytope."""
    return poly.diameter


def intersects(a: Polytope, b: Polytope) -> bool:
    """Closed-set intersection test; touching at one point counts."""
    _check_same_dim(a, b)
    return is_feasible(a.intersect(b))


def interiors_intersect(a: Polytope, b: Polytope, tol: float = 1e-7) -> bool:
    """True iff the open interiors of ``a`` and ``b`` share a point."""
    _check_same_dim(a, b)
    both = a.intersect(b)
    if not is_feasible(both):
        return False
    return _max_inset(both.A, both.b) > tol


def grid_points(poly: Polytope, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform grid over the bounding box, filtered to the polytope.

    Returns the points and the per-axis spacing. A degenerate axis (zero
    width) contributes a single coordinate.
    """
    if resolution < 1:
        raise InputError("resolution must be positive")
    lo, hi = poly.bounds
    axes = []
    spacing = np.zeros(poly.dim)
    for k in range(poly.dim):
        if hi[k] - lo[k] <= FEAS_TOL or resolution == 1:
            axes.append(np.array([0.5 * (lo[k] + hi[k])]))
        else:
            axes.append(np.linspace(lo[k], hi[k], resolution))
            spacing[k] = (hi[k] - lo[k]) / (resolution - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    tol = FEAS_TOL * max(1.0, float(np.abs(poly.b).max()))
    return X[poly.contains(X, tol=tol)], spacing


def equal_cells(poly: Polytope, count: int) -> list[Polytope]:
    """Split the bounding box of ``poly`` into ``count`` equal axis-aligned cells.

    Among the factorizations of ``count`` into one factor per axis, the one
    with the smallest cell diagonal wins (first in enumeration order on ties).
    Each cell is intersected with ``poly``; cells that end up empty are
    dropped, so fewer than ``count`` cells may come back for non-box input.
    """
    if count < 1:
        raise InputError("cell count must be positive")
    lo, hi = poly.bounds
    width = hi - lo
    best = None
    for split in _factorizations(count, poly.dim):
        diag = float(np.linalg.norm(width / np.array(split)))
        if best is None or diag < best[0] - 1e-12:
            best = (diag, split)
    split = best[1]
    edges = [np.linspace(lo[k], hi[k], split[k] + 1) for k in range(poly.dim)]
    cells = []
    for idx in itertools.product(*(range(s) for s in split)):
        clo = np.array([edges[k][i] for k, i in enumerate(idx)])
        chi = np.array([edges[k][i + 1] for k, i in enumerate(idx)])
        cell = Polytope.box(clo, chi).intersect(poly)
        if not cell.is_empty:
            cells.append(cell)
    return cells


def _factorizations(count, dim):
    if dim == 1:
        yield (count,)
        return
    for d in range(1, count + 1):
        if count % d == 0:
            for rest in _factorizations(count // d, dim - 1):
                yield (d,) + rest
