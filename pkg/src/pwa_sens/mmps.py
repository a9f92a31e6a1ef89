"""Continuous piecewise-affine functions in max-min-plus-scaling form.

A function is a minimum over convex segments, each segment being a maximum
of affine pieces::

    f(x) = min_p max_q (a[p, q] @ x + b[p, q])

Every segment carries the polytope on which it is the active segment, and
one activation subregion per affine piece. Indices are zero-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainViolationError, FormatError, InputError
from .polytope import Polytope, grid_points, interiors_intersect, intersects

MMPS_FORMAT = "mmps-v1"
BOUNDARY_TOL = 1e-9
CONTINUITY_TOL = 1e-6


@dataclass(frozen=True)
class AffineMap:
    """One affine piece ``a @ x + b``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).ravel()
        if not (np.all(np.isfinite(a)) and np.isfinite(self.b)):
            raise InputError("affine coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.a + self.b


def _tie_tol(values):
    return 1e-9 * np.maximum(1.0, np.abs(values))


def _empty_polytope(dim: int) -> Polytope:
    return Polytope(np.zeros((1, dim)), [-1.0])


def compute_subregions(pieces: Sequence[AffineMap], region: Polytope) -> list[Polytope]:
    """Activation polytope of every piece inside ``region``.

    Piece ``q`` gets ``{x in region : a_q x + b_q >= a_r x + b_r for all r}``.
    Dominated pieces come back as empty polytopes. When two pieces coincide
    the later one is treated as dominated so that interiors stay disjoint.
    """
    region.bounds  # raises for unbounded or empty regions
    A = np.array([p.a for p in pieces])
    b = np.array([p.b for p in pieces])
    if A.shape[1] != region.dim:
        raise InputError("piece dimension does not match the region")
    out = []
    for q in range(len(pieces)):
        same = [r for r in range(q) if np.allclose(A[r], A[q], rtol=0, atol=1e-12)
                and abs(b[r] - b[q]) <= 1e-12 * max(1.0, abs(b[q]))]
        if same:
            out.append(_empty_polytope(region.dim))
            continue
        others = [r for r in range(len(pieces)) if r != q]
        if not others:
            out.append(region)
            continue
        normals = A[others] - A[q]
        offsets = b[q] - b[others]
        out.append(region.intersect(Polytope(normals, offsets)))
    return out


class ConvexSegment:
    """Maximum of affine pieces on its activation region.

    ``subregions`` may be supplied when they are known by construction (for
    instance the fixed cells of a partition-constrained fit); otherwise they
    are computed from the pieces.
    """

    def __init__(self, pieces: Sequence[AffineMap], region: Polytope,
                 subregions: Optional[Sequence[Polytope]] = None):
        if len(pieces) == 0:
            raise InputError("a convex segment needs at least one affine piece")
        self.pieces = tuple(pieces)
        self.region = region
        self.slopes = np.array([p.a for p in self.pieces])
        self.intercepts = np.array([p.b for p in self.pieces])
        if self.slopes.shape[1] != region.dim:
            raise InputError("piece dimension does not match the region")
        if subregions is None:
            subregions = compute_subregions(self.pieces, region)
        elif len(subregions) != len(self.pieces):
            raise InputError("need exactly one subregion per piece")
        self.subregions = tuple(subregions)

    @property
    def dim(self) -> int:
        return self.region.dim

    def __len__(self):
        return len(self.pieces)

    def piece_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.slopes.T + self.intercepts

    def __call__(self, X):
        """Segment value; accepts one point or an ``(N, n)`` array."""
        single = _is_single(X, self.dim)
        vals = self.piece_values(_as_points(X, self.dim)).max(axis=1)
        return float(vals[0]) if single else vals

    def active_piece(self, X) -> np.ndarray:
        """Index of the maximising piece, smallest index among ties."""
        V = self.piece_values(_as_points(X, self.dim))
        top = V.max(axis=1, keepdims=True)
        return np.argmax(V >= top - _tie_tol(top), axis=1)

    def nonempty(self) -> list[int]:
        return [q for q, s in enumerate(self.subregions) if not s.is_empty]

    def subregion_diameters(self) -> np.ndarray:
        return np.array([0.0 if s.is_empty else s.diameter for s in self.subregions])

    def minimizer(self, resolution: int = 2001) -> np.ndarray:
        """Grid minimiser of the segment over its region."""
        X, _ = grid_points(self.region, resolution if self.dim == 1 else
                           max(2, int(round(resolution ** (1.0 / self.dim)))))
        return X[np.argmin(self(X))]


def _is_single(X, dim: int) -> bool:
    # a scalar in 1-D, a flat length-n vector otherwise
    return np.ndim(X) == 0 or (np.ndim(X) == 1 and dim > 1)


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if dim == 1 else X.reshape(1, -1)
    if X.shape[1] != dim:
        raise InputError(f"point dimension {X.shape[1]} != function dimension {dim}")
    return X


class MmpsFunction:
    """Minimum over convex segments on a polytopic domain.

    Segments compete only on their own regions: outside its region a
    segment is treated as ``+inf``. This keeps fitted surrogates, whose
    segments are fitted region by region, equal to their pieces where the
    regions say they are.
    """

    def __init__(self, segments: Sequence[ConvexSegment], domain: Polytope,
                 feasible: Optional[Polytope] = None):
        if len(segments) == 0:
            raise InputError("an MMPS function needs at least one segment")
        for seg in segments:
            if seg.dim != domain.dim:
                raise InputError("segment dimension does not match the domain")
        self.segments = tuple(segments)
        self.domain = domain
        self.feasible = feasible if feasible is not None else domain
        self._tol = BOUNDARY_TOL * max(1.0, domain.diameter)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def _values(self, X):
        X = _as_points(X, self.dim)
        outside = ~self.domain.contains(X, tol=self._tol)
        if outside.any():
            raise DomainViolationError(
                f"point {X[outside][0].tolist()} lies outside the domain")
        vals = np.full((len(X), len(self.segments)), np.inf)
        for p, seg in enumerate(self.segments):
            mask = seg.region.contains(X, tol=self._tol)
            if mask.any():
                vals[mask, p] = seg(X[mask])
        uncovered = np.all(np.isinf(vals), axis=1)
        if uncovered.any():
            raise DomainViolationError(
                f"point {X[uncovered][0].tolist()} is not covered by any segment")
        return X, vals

    def __call__(self, X):
        single = _is_single(X, self.dim)
        _, vals = self._values(X)
        out = vals.min(axis=1)
        return float(out[0]) if single else out


def evaluate(f: MmpsFunction, x) -> float:
    """Value of ``f`` at one point (or an array of points)."""
    return f(x)


def active_segment(f: MmpsFunction, x) -> tuple[int, int]:
    """Indices ``(p, q)`` attaining the min-max at ``x``.

    Ties are broken towards the lexicographically smallest pair.
    """
    X, vals = f._values(x)
    if len(X) != 1:
        raise InputError("active_segment expects a single point")
    row = vals[0]
    best = row.min()
    p = int(np.argmax(row <= best + _tie_tol(best)))
    q = int(f.segments[p].active_piece(X)[0])
    return p, q


@dataclass
class ValidationReport:
    valid: bool
    max_jump: float
    coverage_gaps: int
    overlapping_pairs: list = field(default_factory=list)
    gap_examples: list = field(default_factory=list)
    continuity_tol: float = CONTINUITY_TOL
    boundary_samples: int = 100


def _boundary_points(shared: Polytope, count: int, rng) -> np.ndarray:
    V = shared.vertices
    if len(V) == 0:
        return V
    if len(V) == 1 or count <= len(V):
        return V
    w = rng.dirichlet(np.ones(len(V)), size=count - len(V))
    return np.vstack([V, w @ V])


def validate(f: MmpsFunction, boundary_samples: int = 100,
             coverage_resolution: Optional[int] = None, seed: int = 0) -> ValidationReport:
    """Check coverage, disjoint interiors and continuity of ``f``.

    Continuity is checked on ``boundary_samples`` points of every shared
    boundary between two segment regions (vertices first, then random convex
    combinations of them).
    """
    rng = np.random.default_rng(seed)
    segs = f.segments
    overlapping = []
    max_jump = 0.0
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            ri, rj = segs[i].region, segs[j].region
            if not intersects(ri, rj):
                continue
            if interiors_intersect(ri, rj):
                overlapping.append((i, j))
                continue
            pts = _boundary_points(ri.intersect(rj), boundary_samples, rng)
            if len(pts):
                jump = np.abs(segs[i](pts) - segs[j](pts)).max()
                max_jump = max(max_jump, float(jump))

    if coverage_resolution is None:
        coverage_resolution = 2001 if f.dim == 1 else max(3, int(round(40000 ** (1 / f.dim))))
    X, _ = grid_points(f.domain, coverage_resolution)
    covered = np.zeros(len(X), dtype=bool)
    for seg in segs:
        covered |= seg.region.contains(X, tol=f._tol)
    gaps = X[~covered]
    valid = max_jump <= CONTINUITY_TOL and len(gaps) == 0 and not overlapping
    return ValidationReport(valid=valid, max_jump=max_jump, coverage_gaps=len(gaps),
                            overlapping_pairs=overlapping,
                            gap_examples=gaps[:5].tolist(),
                            boundary_samples=boundary_samples)


# -- serialization --------------------------------------------------------

def to_json(f: MmpsFunction) -> dict:
    doc = {"format": MMPS_FORMAT, "domain": f.domain.to_halfspaces()}
    if f.feasible is not f.domain:
        doc["feasible"] = f.feasible.to_halfspaces()
    segments = []
    for seg in f.segments:
        entry = {
            "pieces": [{"a": p.a.tolist(), "b": p.b} for p in seg.pieces],
            "region": seg.region.to_halfspaces(),
        }
        if getattr(seg, "fixed_subregions", False):
            entry["subregions"] = [s.to_halfspaces() for s in seg.subregions]
        segments.append(entry)
    doc["segments"] = segments
    return doc


def from_json(doc: dict) -> MmpsFunction:
    if not isinstance(doc, dict) or doc.get("format") != MMPS_FORMAT:
        raise FormatError(f"expected a document with format {MMPS_FORMAT!r}")
    try:
        domain = Polytope.from_halfspaces(doc["domain"])
        feasible = (Polytope.from_halfspaces(doc["feasible"])
                    if "feasible" in doc else None)
        segments = []
        for entry in doc["segments"]:
            pieces = [AffineMap(p["a"], p["b"]) for p in entry["pieces"]]
            region = Polytope.from_halfspaces(entry["region"])
            subs = entry.get("subregions")
            if subs is not None:
                subs = [Polytope.from_halfspaces(s) for s in subs]
            seg = ConvexSegment(pieces, region, subs)
            seg.fixed_subregions = subs is not None
            segments.append(seg)
        return MmpsFunction(segments, domain, feasible)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, InputError) as exc:
        raise FormatError(f"malformed {MMPS_FORMAT} document: {exc}") from exc


def single_segment(pieces, region: Polytope, subregions=None) -> MmpsFunction:
    """Wrap one convex segment as an MMPS function on its own region."""
    pieces = [p if isinstance(p, AffineMap) else AffineMap(*p) for p in pieces]
    seg = ConvexSegment(pieces, region, subregions)
    seg.fixed_subregions = subregions is not None
    return MmpsFunction([seg], region)
