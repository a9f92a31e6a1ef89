"""Convexity modulus of a convex segment and the radii it certifies.

For a convex segment ``f`` on region ``C`` the modulus is

    h1(gamma) = inf { J(v, w) : v, w in C, |v - w| = gamma },
    J(v, w)   = (f(v) + f(w)) / 2 - f((v + w) / 2),

and ``h1 = +inf`` once ``gamma`` reaches the region diameter. A minimiser
of any perturbation of ``f`` by at most ``delta`` in sup-norm lies within
``h1^-1(2 * delta)`` of a minimiser of ``f``; that distance is the
confidence radius.

In one dimension the curve is computed exactly. With ``w = v + gamma`` the
gap ``J`` is piecewise affine in ``v`` and only kinks where ``v``,
``v + gamma/2`` or ``v + gamma`` cross a breakpoint, so its minimum over
``v`` sits at one of finitely many candidates. In higher dimensions the
infimum is estimated from sampled pairs and the result is an upper bound.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateBoundError, DomainViolationError, EmptyRegionError, InputError
from .fields import field_values
from .mmps import ConvexSegment
from .polytope import grid_points, intersects

EXACT_1D = "exact-1d"
SAMPLED_ND = "sampled-nd"
DEFAULT_PAIRS = 4096
DEFAULT_REFINE_STEPS = 20
_REL_TIE = 1e-9


def midpoint_gap(seg: ConvexSegment, v, w) -> float:
    """``(f(v) + f(w)) / 2 - f((v + w) / 2)`` for points of the segment region."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    tol = 1e-9 * max(1.0, seg.region.diameter)
    for p in (v, w):
        if not seg.region.contains(p, tol=tol):
            raise DomainViolationError(f"point {p.tolist()} lies outside the segment region")
    pts = np.vstack([v, w, 0.5 * (v + w)])
    fv, fw, fm = seg(pts)
    return float(0.5 * (fv + fw) - fm)


def _gaps(seg, V, W):
    return 0.5 * (seg(V) + seg(W)) - seg(0.5 * (V + W))


# -- curve type -------------------------------------------------------------

@dataclass
class ModulusCurve:
    """Sampled, non-decreasing modulus curve on ``[0, diam)``."""

    gammas: np.ndarray
    values: np.ndarray
    diam: float
    mode: str
    zero_radius: float = 0.0
    exact: Optional[Callable[[float], float]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.gammas[0] != 0.0 or self.values[0] != 0.0:
            raise InputError("a modulus curve starts at (0, 0)")
        if np.any(np.diff(self.gammas) <= 0):
            raise InputError("curve abscissae must be strictly increasing")
        if np.any(np.diff(self.values) < 0):
            raise InputError("curve values must be non-decreasing")

    @property
    def samples(self):
        return list(zip(self.gammas.tolist(), self.values.tolist()))

    def __call__(self, gamma: float) -> float:
        if gamma >= self.diam:
            return math.inf
        if self.exact is not None:
            return self.exact(gamma)
        return float(np.interp(gamma, self.gammas, self.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gamma", "h1"])
        for g, h in zip(self.gammas, self.values):
            writer.writerow([repr(float(g)), repr(float(h))])
        return buf.getvalue()


# -- exact 1-D curve --------------------------------------------------------

def _breakpoints_1d(seg: ConvexSegment) -> np.ndarray:
    pts = []
    for q in seg.nonempty():
        lo, hi = seg.subregions[q].bounds
        pts.extend([lo[0], hi[0]])
    return np.unique(np.array(pts))


def _exact_h1_1d(seg, lo, hi, bps, gamma):
    if gamma <= 0.0:
        return 0.0
    cand = np.concatenate([[lo, hi - gamma], bps, bps - 0.5 * gamma, bps - gamma])
    eps = 1e-12 * max(1.0, abs(lo), abs(hi))
    cand = np.clip(cand[(cand >= lo - eps) & (cand <= hi - gamma + eps)], lo, hi - gamma)
    if cand.size == 0:
        return math.inf
    V = cand[:, None]
    return max(0.0, float(_gaps(seg, V, V + gamma).min()))


def _gamma_grid(diam, steps, zero_radius):
    g = np.linspace(0.0, diam, steps + 1)[:-1]
    if 0.0 < zero_radius < diam:
        g = np.union1d(g, [zero_radius])
    return g


def _suffix_min(values):
    return np.minimum.accumulate(values[::-1])[::-1]


def exact_curve_1d(seg: ConvexSegment, gamma_steps: int = 1000) -> ModulusCurve:
    if seg.dim != 1:
        raise InputError("the exact curve is only available in one dimension")
    lo, hi = (float(v[0]) for v in seg.region.bounds)
    diam = hi - lo
    bps = _breakpoints_1d(seg)
    zr = float(seg.subregion_diameters().max())
    gammas = _gamma_grid(diam, gamma_steps, zr)

    def h1(g):
        return _exact_h1_1d(seg, lo, hi, bps, g)

    vals = np.array([h1(g) for g in gammas])
    vals[gammas <= zr] = 0.0
    return ModulusCurve(gammas, _suffix_min(vals), diam, EXACT_1D, zr, exact=h1)


# -- sampled n-D curve ------------------------------------------------------

def _chords(A, b, U, D):
    """Parameter range ``[tmin, tmax]`` of ``U + t D`` inside ``A x <= b``."""
    slack = b[None, :] - U @ A.T
    rate = D @ A.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = slack / rate
    tmax = np.where(rate > 1e-15, t, np.inf).min(axis=1)
    tmin = np.where(rate < -1e-15, t, -np.inf).max(axis=1)
    inside = np.all(slack >= -1e-9, axis=1)
    tmax = np.where(inside, tmax, -np.inf)
    return tmin, tmax


def _unit(D):
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def sampled_curve(seg: ConvexSegment, gamma_steps: int = 200, pairs: int = DEFAULT_PAIRS,
                  refine_steps: int = DEFAULT_REFINE_STEPS, seed: int = 0) -> ModulusCurve:
    """Upper estimate of the modulus from random and vertex-anchored pairs."""
    rng = np.random.default_rng(seed)
    region = seg.region
    A, b = region.A, region.b
    n = seg.dim
    Vr = region.vertices
    diam = region.diameter
    zr = float(seg.subregion_diameters().max())

    # random anchors (convex combinations of vertices) and directions
    U = rng.dirichlet(np.ones(len(Vr)), size=pairs) @ Vr
    D = _unit(rng.standard_normal((pairs, n)))
    R = rng.uniform(size=pairs)
    # vertex chords of every subregion and of the region itself
    anchors, dirs = [], []
    for poly in [region] + [seg.subregions[q] for q in seg.nonempty()]:
        V = poly.vertices
        for i in range(len(V)):
            for j in range(len(V)):
                d = V[j] - V[i]
                if i != j and np.linalg.norm(d) > 1e-12:
                    anchors.append(V[i])
                    dirs.append(d / np.linalg.norm(d))
    if anchors:
        U = np.vstack([U, anchors])
        D = np.vstack([D, dirs])
        R = np.concatenate([R, np.zeros(len(anchors))])
    tmin, tmax = _chords(A, b, U, D)

    def place(U, D, R, tmin, tmax, g):
        ok = tmax - tmin >= g
        s = tmin + R * np.maximum(tmax - tmin - g, 0.0)
        s = np.where(np.isfinite(s), s, 0.0)
        Vp = U + s[:, None] * D
        return Vp, Vp + g * D, ok

    gammas = _gamma_grid(diam, gamma_steps, zr)
    vals = np.zeros(len(gammas))
    for k, g in enumerate(gammas):
        if g == 0.0:
            continue
        Vp, Wp, ok = place(U, D, R, tmin, tmax, g)
        J = np.where(ok, _gaps(seg, Vp, Wp), np.inf)
        best = J.min()
        if refine_steps and np.isfinite(best):
            best = min(best, _refine(seg, A, b, U, D, R, J, g, refine_steps, rng, diam, place))
        vals[k] = max(0.0, best) if np.isfinite(best) else vals[k - 1]
    return ModulusCurve(gammas, _suffix_min(vals), diam, SAMPLED_ND, zr)


def _refine(seg, A, b, U, D, R, J, g, steps, rng, diam, place, keep=8):
    idx = np.argsort(J)[:keep]
    idx = idx[np.isfinite(J[idx])]
    u, d, r, j = U[idx].copy(), D[idx].copy(), R[idx].copy(), J[idx].copy()
    for step in range(steps):
        scale = 0.1 * diam * 0.5 ** (step / 4)
        u2 = u + scale * rng.standard_normal(u.shape)
        d2 = _unit(d + (scale / max(diam, 1e-12)) * rng.standard_normal(d.shape))
        r2 = np.clip(r + 0.1 * rng.standard_normal(r.shape), 0.0, 1.0)
        t0, t1 = _chords(A, b, u2, d2)
        Vp, Wp, ok = place(u2, d2, r2, t0, t1, g)
        j2 = np.where(ok, _gaps(seg, Vp, Wp), np.inf)
        better = j2 < j
        u[better], d[better], r[better], j[better] = u2[better], d2[better], r2[better], j2[better]
    return float(j.min()) if len(j) else math.inf


def modulus_curve(seg: ConvexSegment, gamma_steps: int = 1000, mode: Optional[str] = None,
                  pairs: int = DEFAULT_PAIRS, refine_steps: int = DEFAULT_REFINE_STEPS,
                  seed: int = 0) -> ModulusCurve:
    """Modulus curve on a uniform grid of ``[0, diam)``.

    The largest subregion diameter is inserted as an extra abscissa so that
    the end of the zero stretch is represented exactly.
    """
    if gamma_steps < 2:
        raise InputError("gamma_steps must be at least 2")
    seg.region.bounds  # raises for unbounded regions
    mode = mode or (EXACT_1D if seg.dim == 1 else SAMPLED_ND)
    if mode == EXACT_1D:
        return exact_curve_1d(seg, gamma_steps)
    if mode == SAMPLED_ND:
        return sampled_curve(seg, gamma_steps, pairs, refine_steps, seed)
    raise InputError(f"unknown curve mode {mode!r}")


# -- closed-form lower bound ------------------------------------------------

@dataclass
class LowerBoundModulus:
    """Piecewise-linear lower bound ``max(0, c1 * (gamma - zero_radius))``.

    ``c0 = c1 * diam`` is the raw intercept constant kept for traceability;
    it is not used when evaluating the bound.
    """

    c1: Optional[float]
    c0: Optional[float]
    zero_radius: float
    diam: float
    largest: int
    neighbours: list
    c1_conservative: Optional[float] = None
    convention: str = "abs-slope-gap"

    @property
    def degenerate(self) -> bool:
        return self.c1 is None or self.c1 <= 0.0

    def __call__(self, gamma: float, conservative: bool = False) -> float:
        if gamma >= self.diam:
            return math.inf
        c1 = self.c1_conservative if conservative else self.c1
        if c1 is None:
            return 0.0
        return max(0.0, c1 * (gamma - self.zero_radius))


def _slope_gap(seg, i, j):
    return 0.5 * float(np.linalg.norm(seg.slopes[i] - seg.slopes[j]))


def lower_bound_modulus(seg: ConvexSegment, minimizer=None) -> LowerBoundModulus:
    """Slope constant of the lower bound, taken at the largest subregion.

    ``c1`` is the smallest half slope gap between the piece of the largest
    subregion and the pieces whose subregions touch it. When several
    subregions share the largest diameter (uniform cells), the ones holding
    the segment minimiser are preferred, then the smallest ``c1``.
    ``c1_conservative`` is the minimum over every touching pair, which is a
    valid slope for the lower bound in one dimension in all cases.
    """
    if seg.region.is_empty:
        raise EmptyRegionError("segment region is empty")
    live = seg.nonempty()
    if not live:
        raise EmptyRegionError("segment has no non-empty subregion")
    diams = seg.subregion_diameters()
    zr = float(diams.max())
    diam = seg.region.diameter
    conv = "abs-slope-gap" if seg.dim == 1 else "euclidean-norm-slope-gap"

    touching = {q: [r for r in live if r != q and intersects(seg.subregions[q], seg.subregions[r])]
                for q in live}
    pair_gaps = [_slope_gap(seg, q, r) for q in live for r in touching[q]]
    c1_cons = min(pair_gaps) if pair_gaps else None

    top = [q for q in live if diams[q] >= zr * (1 - _REL_TIE) - 1e-15]
    if len(top) > 1:
        x = seg.minimizer() if minimizer is None else np.atleast_1d(minimizer)
        holding = [q for q in top
                   if seg.subregions[q].contains(x, tol=1e-9 * max(1.0, diam))]
        top = holding or top
    best = None
    for q in top:
        if not touching[q]:
            continue
        c = min(_slope_gap(seg, q, r) for r in touching[q])
        if best is None or c < best[0]:
            best = (c, q)
    if best is None:
        return LowerBoundModulus(None, None, zr, diam, top[0], [], c1_cons, conv)
    c1, i = best
    return LowerBoundModulus(c1, c1 * diam, zr, diam, i, touching[i], c1_cons, conv)


# -- radii ------------------------------------------------------------------

def inverse_modulus(curve: ModulusCurve, y: float) -> float:
    """Generalised inverse ``sup {gamma in [0, diam] : h1(gamma) <= y}``.

    Linear between samples; exact curves refine the bracket by bisection on
    the exact modulus. Saturates at ``diam`` once ``y`` reaches the last
    sample value.
    """
    if y < 0 or not np.isfinite(y):
        raise InputError("the modulus inverse needs a finite y >= 0")
    g, h = curve.gammas, curve.values
    below = np.nonzero(h <= y)[0]
    k = int(below.max())
    if k == len(g) - 1:
        return float(curve.diam)
    lo, hi = g[k], g[k + 1]
    if curve.exact is not None:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if curve.exact(mid) <= y:
                lo = mid
            else:
                hi = mid
        return float(lo)
    if h[k + 1] > h[k]:
        return float(lo + (hi - lo) * (y - h[k]) / (h[k + 1] - h[k]))
    return float(hi)


def theorem_bound(bound: LowerBoundModulus, delta: float, cap: bool = True) -> float:
    """``2 * delta / c1 + zero_radius``, capped at the region diameter."""
    if delta < 0:
        raise InputError("delta must be non-negative")
    if bound.degenerate:
        err = DegenerateBoundError("c1 is zero or undefined; only the region diameter is certified")
        err.radius = bound.diam
        raise err
    r = 2.0 * delta / bound.c1 + bound.zero_radius
    return min(r, bound.diam) if cap else r


def confidence_radius(curve_or_bound, delta: float) -> float:
    """``h1^-1(2 * delta)`` from a curve, or the theorem route from a bound.

    A degenerate bound certifies only the region diameter, which is returned.
    """
    if delta < 0 or not np.isfinite(delta):
        raise InputError("delta must be finite and non-negative")
    if isinstance(curve_or_bound, LowerBoundModulus):
        try:
            return theorem_bound(curve_or_bound, delta)
        except DegenerateBoundError as err:
            return err.radius
    return inverse_modulus(curve_or_bound, 2.0 * delta)


# -- oracle verification ----------------------------------------------------

@dataclass
class SensitivityReport:
    delta: float
    c1: Optional[float]
    max_subregion_diam: float
    region_diam: float
    chi_theorem: Optional[float]
    chi_curve: Optional[float]
    verified: bool
    oracle_distance: Optional[float]
    radius: Optional[float] = None
    degenerate: bool = False
    c1_conservative: Optional[float] = None
    chi_theorem_conservative: Optional[float] = None
    minimizer_objective: Optional[list] = None
    minimizer_surrogate: Optional[list] = None
    grid_resolution: Optional[int] = None
    grid_spacing: Optional[float] = None
    convention: str = "abs-slope-gap"
    history: Optional[list] = None

    def to_dict(self) -> dict:
        return asdict(self)


def default_resolution(dim: int) -> int:
    return {1: 10_000, 2: 2001, 3: 100}.get(dim, 20)


def _chunked(F, X, chunk=1_000_000):
    return np.concatenate([field_values(F, X[i:i + chunk]) for i in range(0, len(X), chunk)])


def verify_bound(F, seg: ConvexSegment, radius: Optional[float] = None,
                 grid_resolution: Optional[int] = None, curve: Optional[ModulusCurve] = None,
                 delta: Optional[float] = None) -> SensitivityReport:
    """Grid-minimise ``F`` and the segment and compare the minimisers.

    ``delta`` defaults to the sup-gap on the same grid. ``radius`` defaults
    to the smallest available certified radius (curve or theorem).
    """
    res = grid_resolution or default_resolution(seg.dim)
    X, spacing = grid_points(seg.region, res)
    fF = _chunked(F, X)
    fs = seg(X)
    if delta is None:
        delta = float(np.abs(fF - fs).max())
    lb = lower_bound_modulus(seg)
    chi_thm = chi_cons = None
    if not lb.degenerate:
        chi_thm = theorem_bound(lb, delta)
    if lb.c1_conservative:
        chi_cons = min(2 * delta / lb.c1_conservative + lb.zero_radius, lb.diam)
    chi_curve = confidence_radius(curve, delta) if curve is not None else None
    if radius is None:
        cands = [r for r in (chi_curve, chi_thm) if r is not None]
        radius = min(cands) if cands else lb.diam
    xF = X[int(np.argmin(fF))]
    xf = X[int(np.argmin(fs))]
    dist = float(np.linalg.norm(xF - xf))
    h = float(np.linalg.norm(spacing))
    return SensitivityReport(
        delta=float(delta), c1=lb.c1, max_subregion_diam=lb.zero_radius,
        region_diam=lb.diam, chi_theorem=chi_thm, chi_curve=chi_curve,
        verified=bool(dist <= radius + h), oracle_distance=dist, radius=float(radius),
        degenerate=lb.degenerate, c1_conservative=lb.c1_conservative,
        chi_theorem_conservative=chi_cons, minimizer_objective=xF.tolist(),
        minimizer_surrogate=xf.tolist(), grid_resolution=res, grid_spacing=h,
        convention=lb.convention)
