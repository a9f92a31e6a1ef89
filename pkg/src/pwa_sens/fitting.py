"""Fitting min-of-max surrogates to sampled objectives.

Two ways to fit one convex segment:

* free pieces: alternating assignment. Samples are split among pieces,
  each piece is fitted to its samples by a small linear program, samples
  are reassigned to the piece that is largest there, and so on until the
  assignment settles. A final joint LP refits all pieces at once with the
  settled assignment as activation constraints, so the residual it reports
  is exactly the sup-error of the max over pieces on the samples.
* fixed cells: every piece is pinned to one cell of a given partition of
  the region. Activation is imposed at the cell vertices, which by
  linearity makes each piece the maximum on its whole cell.

The default objective is the sup-error (``linf``); ``l1`` minimises the
summed absolute error instead. Sup-error fits are polished with a
secondary L1 pass that keeps the optimal sup-error.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .errors import InputError, InsufficientDataError, PwaSensError
from .fields import field_values
from .mmps import AffineMap, ConvexSegment, MmpsFunction
from .modulus import (SensitivityReport, lower_bound_modulus, theorem_bound,
                      verify_bound)
from .polytope import Polytope, equal_cells, grid_points, intersects, interiors_intersect

log = logging.getLogger(__name__)

LINF = "linf"
L1 = "l1"
OBJECTIVES = (LINF, L1)


@dataclass
class SampleSet:
    X: np.ndarray
    values: np.ndarray
    domain: Polytope
    resolution: int
    spacing: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.values)

    @property
    def points(self):
        return list(zip(self.X.tolist(), self.values.tolist()))

    def restrict(self, region: Polytope, tol: float = 1e-9) -> "SampleSet":
        mask = region.contains(self.X, tol=tol * max(1.0, self.domain.diameter))
        return SampleSet(self.X[mask], self.values[mask], region, self.resolution, self.spacing)


@dataclass
class FitConfig:
    partition: Optional[list] = None
    target_segment_count: Optional[int] = None
    pieces_per_segment: Union[int, Sequence[int], str] = 3
    objective: str = LINF
    max_iterations: int = 50
    seed: int = 0
    restarts: int = 5
    resolution: Optional[int] = None
    fixed_cells: bool = False
    adaptive_tol: Optional[float] = None
    max_pieces: int = 16
    max_refinements: int = 40

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise InputError(f"objective must be one of {OBJECTIVES}")
        if self.max_iterations < 1 or self.restarts < 1:
            raise InputError("iteration and restart counts must be positive")


@dataclass
class DeltaEstimate:
    delta: float
    argmax_point: list
    resolution: int
    padded: bool = False


def default_fit_resolution(dim: int) -> int:
    return {1: 1501, 2: 31}.get(dim, 11)


def sample(F, domain: Polytope, resolution: int) -> SampleSet:
    """Evaluate ``F`` on a uniform grid of the domain's bounding box."""
    if resolution < 2 and domain.diameter > 0:
        raise InputError("resolution must be at least 2")
    X, spacing = grid_points(domain, resolution)
    extra = domain.vertices
    if len(extra):
        X = np.unique(np.vstack([X, extra]), axis=0)
    return SampleSet(X, field_values(F, X), domain, resolution, spacing)


def estimate_delta(F, f, region: Polytope, resolution: int,
                   lipschitz: Optional[float] = None) -> DeltaEstimate:
    """Largest sampled ``|f - F|`` over the region.

    ``resolution`` counts grid intervals per axis, so the grid at ``2R``
    contains the grid at ``R`` and doubling never lowers the estimate.
    With a Lipschitz constant ``L`` for ``f - F`` the estimate is padded by
    ``L * h / 2`` (``h`` the grid spacing norm), which turns it into a
    certified bound.
    """
    if resolution < 1:
        raise InputError("resolution must be positive")
    X, spacing = grid_points(region, resolution + 1)
    gap = np.abs(np.asarray(f(X), dtype=float).ravel() - field_values(F, X))
    k = int(np.argmax(gap))
    delta = float(gap[k])
    if lipschitz is not None:
        delta += 0.5 * lipschitz * float(np.linalg.norm(spacing))
    return DeltaEstimate(delta, X[k].tolist(), resolution, lipschitz is not None)


# -- linear programs --------------------------------------------------------

def _aug(X):
    return np.hstack([X, np.ones((len(X), 1))])


def _minimax_line(x, y):
    """Exact sup-error line fit in one variable.

    The width ``max(y - s x) - min(y - s x)`` is convex and piecewise linear
    in the slope ``s`` with kinks at the edge slopes of the convex hull of
    the points, so the optimum is among those slopes.
    """
    P = np.unique(np.column_stack([x, y]), axis=0)
    if len(np.unique(P[:, 0])) < 2:
        return np.array([0.0, float(0.5 * (P[:, 1].max() + P[:, 1].min()))])
    try:
        hull = ConvexHull(P)
    except QhullError:  # collinear points: exact fit
        s, c = np.polyfit(P[:, 0], P[:, 1], 1)
        return np.array([s, c])
    H = P[hull.vertices]
    E = P[hull.simplices]
    dx = E[:, 1, 0] - E[:, 0, 0]
    slopes = (E[dx != 0, 1, 1] - E[dx != 0, 0, 1]) / dx[dx != 0]
    slopes = np.unique(slopes)
    R = H[:, 1][None, :] - slopes[:, None] * H[:, 0][None, :]
    width = R.max(axis=1) - R.min(axis=1)
    k = int(np.argmin(width))
    return np.array([slopes[k], 0.5 * (R[k].max() + R[k].min())])


def _piece_fit(X, y, objective):
    """Best single affine map for the samples ``(X, y)``."""
    N, n = X.shape
    if objective == LINF and n == 1:
        return _minimax_line(X[:, 0], y)
    if objective == LINF and N > 2 * (n + 2):
        # the sup-error of an affine fit is attained at vertices of the hull
        # of the lifted points
        try:
            keep = ConvexHull(np.column_stack([X, y])).vertices
            X, y, N = X[keep], y[keep], len(keep)
        except QhullError:
            pass
    Xa = _aug(X)
    m = n + 1
    if objective == LINF:
        A = np.block([[Xa, -np.ones((N, 1))], [-Xa, -np.ones((N, 1))]])
        res = linprog(np.r_[np.zeros(m), 1.0], A_ub=A, b_ub=np.r_[y, -y],
                      bounds=[(None, None)] * m + [(0, None)], method="highs")
        if res.status != 0:
            raise PwaSensError("piece fit LP failed: " + res.message)
        return res.x[:m]
    Xa = sp.csr_matrix(Xa)
    if objective == LINF:
        one = sp.csr_matrix(np.ones((N, 1)))
        A = sp.vstack([sp.hstack([Xa, -one]), sp.hstack([-Xa, -one])])
        c = np.r_[np.zeros(m), 1.0]
        bounds = [(None, None)] * m + [(0, None)]
    else:
        I = sp.identity(N, format="csr")
        A = sp.vstack([sp.hstack([Xa, -I]), sp.hstack([-Xa, -I])])
        c = np.r_[np.zeros(m), np.ones(N)]
        bounds = [(None, None)] * m + [(0, None)] * N
    res = linprog(c, A_ub=A.tocsr(), b_ub=np.r_[y, -y], bounds=bounds, method="highs")
    if res.status != 0:
        raise PwaSensError("piece fit LP failed: " + res.message)
    return res.x[:m]


def _pieces_fit(groups, objective):
    """Fit several independent pieces, one ``(X, y)`` group each.

    In one dimension each sup-error piece has a closed form. Otherwise all
    groups go into one block-diagonal LP whose objective is the sum of the
    per-group errors; the blocks do not interact, so each block is optimal
    for its own group.
    """
    n = groups[0][0].shape[1]
    if objective == LINF and n == 1:
        return np.array([_minimax_line(X[:, 0], y) for X, y in groups])
    if len(groups) == 1:
        return _piece_fit(*groups[0], objective)[None, :]
    m = n + 1
    blocks, rhs = [], []
    G = len(groups)
    if objective == LINF:
        reduced = []
        for X, y in groups:
            if len(X) > 2 * (n + 2):
                try:
                    keep = ConvexHull(np.column_stack([X, y])).vertices
                    X, y = X[keep], y[keep]
                except QhullError:
                    pass
            reduced.append((X, y))
        for g, (X, y) in enumerate(reduced):
            Xa = _aug(X)
            T = np.zeros((len(X), G))
            T[:, g] = -1.0
            W = np.zeros((len(X), G * m))
            W[:, g * m:(g + 1) * m] = Xa
            blocks.append(np.vstack([np.hstack([W, T]), np.hstack([-W, T])]))
            rhs.append(np.r_[y, -y])
        A = sp.csr_matrix(np.vstack(blocks))
        c = np.r_[np.zeros(G * m), np.ones(G)]
        bounds = [(None, None)] * (G * m) + [(0, None)] * G
        res = linprog(c, A_ub=A, b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
        if res.status != 0:
            raise PwaSensError("piece fit LP failed: " + res.message)
        return res.x[:G * m].reshape(G, m)
    return np.array([_piece_fit(X, y, objective) for X, y in groups])


def _selector(Xa, rows, cols, K):
    """Sparse matrix whose row r evaluates piece ``cols[r]`` at ``Xa[rows[r]]``."""
    m = Xa.shape[1]
    R = len(rows)
    data = Xa[rows].ravel()
    ii = np.repeat(np.arange(R), m)
    jj = (cols[:, None] * m + np.arange(m)).ravel()
    return sp.csr_matrix((data, (ii, jj)), shape=(R, K * m))


def _activation_rows(Xa, labels, K):
    """Rows of ``piece_o(x) - piece_label(x) <= 0`` for every other piece."""
    N = len(labels)
    ii = np.repeat(np.arange(N), K)
    oo = np.tile(np.arange(K), N)
    keep = oo != labels[ii]
    ii, oo = ii[keep], oo[keep]
    return _selector(Xa, ii, oo, K) - _selector(Xa, ii, labels[ii], K)


def _blocks_lp(groups, objective, n):
    """Joint LP over several segments sharing continuity equalities.

    ``groups`` is a list of dicts with keys ``X, y, labels, K`` and optional
    ``act_X, act_labels`` (activation points, each with its set of allowed
    labels encoded as one label per row; repeated points express ties).
    Continuity is passed as ``eq`` entries ``(g1, X1, lab1, g2, X2, lab2)``
    on the group list itself via the key ``"_eq"``.
    Returns one ``(K, n+1)`` weight array per group and the per-group
    residuals.
    """
    eqs = groups[0].get("_eq", [])
    m = n + 1
    offs = np.cumsum([0] + [g["K"] * m for g in groups])
    nw = int(offs[-1])
    G = len(groups)
    fit_rows, act_rows, rhs_fit = [], [], []
    group_of_row = []
    for gi, g in enumerate(groups):
        Xa = _aug(g["X"])
        P = _selector(Xa, np.arange(len(Xa)), g["labels"], g["K"])
        pad = lambda M, gi=gi: sp.hstack([sp.csr_matrix((M.shape[0], int(offs[gi]))), M,
                                          sp.csr_matrix((M.shape[0], nw - int(offs[gi + 1])))])
        fit_rows.append(pad(P))
        rhs_fit.append(g["y"])
        group_of_row.append(np.full(len(g["y"]), gi))
        ax = g.get("act_X", g["X"])
        al = g.get("act_labels", g["labels"])
        if g["K"] > 1 and len(ax):
            act_rows.append(pad(_activation_rows(_aug(ax), al, g["K"])))
    eq_rows = []
    for g1, X1, l1, g2, X2, l2 in eqs:
        A1 = _selector(_aug(X1), np.arange(len(X1)), l1, groups[g1]["K"])
        A2 = _selector(_aug(X2), np.arange(len(X2)), l2, groups[g2]["K"])
        row = sp.lil_matrix((len(X1), nw))
        row[:, int(offs[g1]):int(offs[g1 + 1])] = A1
        row[:, int(offs[g2]):int(offs[g2 + 1])] -= A2
        eq_rows.append(row.tocsr())

    P = sp.vstack(fit_rows).tocsr()
    y = np.concatenate(rhs_fit)
    gidx = np.concatenate(group_of_row)
    N = len(y)
    Act = sp.vstack(act_rows).tocsr() if act_rows else sp.csr_matrix((0, nw))
    Aeq = sp.vstack(eq_rows).tocsr() if eq_rows else None
    R = Act.shape[0]

    if objective == LINF:
        # variables: weights, one sup-error per group
        T = sp.csr_matrix((np.ones(N), (np.arange(N), gidx)), shape=(N, G))
        A_ub = sp.vstack([sp.hstack([P, -T]), sp.hstack([-P, -T]),
                          sp.hstack([Act, sp.csr_matrix((R, G))])]).tocsr()
        b_ub = np.r_[y, -y, np.zeros(R)]
        A_eq = sp.hstack([Aeq, sp.csr_matrix((Aeq.shape[0], G))]).tocsr() if Aeq is not None else None
        b_eq = np.zeros(A_eq.shape[0]) if A_eq is not None else None
        c = np.r_[np.zeros(nw), np.ones(G)]
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=[(None, None)] * nw + [(0, None)] * G, method="highs")
        if res.status != 0:
            raise PwaSensError("joint fit LP failed: " + res.message)
        caps = res.x[nw:] * (1 + 1e-7) + 1e-9
        cap_per_row = caps[gidx]
    else:
        cap_per_row = np.full(N, np.inf)

    # summed absolute error, optionally under the sup-error caps found above
    I = sp.identity(N, format="csr")
    A_ub = sp.vstack([sp.hstack([P, -I]), sp.hstack([-P, -I]),
                      sp.hstack([Act, sp.csr_matrix((R, N))])]).tocsr()
    b_ub = np.r_[y, -y, np.zeros(R)]
    A_eq = sp.hstack([Aeq, sp.csr_matrix((Aeq.shape[0], N))]).tocsr() if Aeq is not None else None
    b_eq = np.zeros(A_eq.shape[0]) if A_eq is not None else None
    c = np.r_[np.zeros(nw), np.ones(N)]
    bounds = [(None, None)] * nw + [(0, None if not np.isfinite(u) else u) for u in cap_per_row]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise PwaSensError("joint fit LP failed: " + res.message)
    w = res.x[:nw]
    out = [w[int(offs[i]):int(offs[i + 1])].reshape(g["K"], m) for i, g in enumerate(groups)]
    resid = [_max_resid(g["X"], g["y"], W) for g, W in zip(groups, out)]
    return out, resid


# -- one segment, free pieces -----------------------------------------------

def _max_resid(X, y, W):
    return float(np.abs((_aug(X) @ W.T).max(axis=1) - y).max())


def _cell_labels(X, region, k, rng=None):
    """Initial assignment: equal cells, optionally with jittered edges."""
    if k == 1:
        return np.zeros(len(X), dtype=int)
    if rng is None:
        cells = equal_cells(region, k)
        lab = np.full(len(X), -1)
        for q, cell in enumerate(cells):
            free = lab < 0
            lab[free & cell.contains(X, tol=1e-9)] = q
        lab[lab < 0] = 0
        return lab
    if X.shape[1] == 1:
        lo, hi = X[:, 0].min(), X[:, 0].max()
        width = (hi - lo) / k
        edges = np.linspace(lo, hi, k + 1)[1:-1] + rng.uniform(-0.4, 0.4, k - 1) * width
        return np.searchsorted(np.sort(edges), X[:, 0], side="right")
    centres = X[rng.choice(len(X), size=k, replace=False)]
    d = ((X[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)


def _alternate(X, y, lab, k, objective, iters, patience=5):
    """Alternating assignment; returns the best iterate seen.

    Stops when the assignment settles, after ``iters`` rounds, or after
    ``patience`` rounds without improving the score.
    """
    n = X.shape[1]
    Xa = _aug(X)
    W = np.zeros((k, n + 1))
    W[:, -1] = -np.inf
    last = [None] * k
    best, stale = None, 0
    for _ in range(iters):
        todo = []
        for q in range(k):
            mask = lab == q
            if mask.sum() >= n + 1 and (last[q] is None or not np.array_equal(mask, last[q])):
                todo.append(q)
                last[q] = mask
        if todo:
            W[todo] = _pieces_fit([(X[lab == q], y[lab == q]) for q in todo], objective)
        live = np.isfinite(W[:, -1])
        V = np.where(live[None, :], Xa @ np.where(live[:, None], W, 0).T, -np.inf)
        new = V.argmax(axis=1)
        s = _score(X, y, W, objective)
        if best is None or s < best[2] - 1e-12:
            best, stale = (new, W.copy(), s), 0
        else:
            stale += 1
        if np.array_equal(new, lab) or stale >= patience:
            break
        lab = new
    return best[0], best[1]


def _split_worst(X, y, lab, W, k_new):
    """Split the cluster holding the worst residual into two along its main axis."""
    resid = np.abs((_aug(X) @ W.T).max(axis=1) - y)
    q = lab[int(np.argmax(resid))]
    idx = np.nonzero(lab == q)[0]
    if len(idx) < 2:
        return lab
    P = X[idx] - X[idx].mean(axis=0)
    axis = np.linalg.svd(P, full_matrices=False)[2][0] if X.shape[1] > 1 else np.ones(1)
    t = P @ axis
    lab = lab.copy()
    lab[idx[t > np.median(t)]] = k_new - 1
    return lab


def _polish(X, y, lab, k, objective):
    used = np.unique(lab)
    lab = np.searchsorted(used, lab)
    K = len(used)
    (W,), (r,) = _blocks_lp([{"X": X, "y": y, "labels": lab, "K": K}], objective, X.shape[1])
    return lab, W, r


def _score(X, y, W, objective):
    live = np.isfinite(W[:, -1])
    e = np.abs((_aug(X) @ W[live].T).max(axis=1) - y)
    return float(e.max()) if objective == LINF else float(e.sum())


def _fit_free(samples: SampleSet, pieces, objective, iters, seed, restarts):
    X, y = samples.X, samples.values
    prev = None  # (labels, W, score)
    for k in range(1, pieces + 1):
        rng = np.random.default_rng([seed, k])
        # ``restarts`` initialisations: equal cells, a split of the previous
        # stage, then jittered cells
        starts = [_cell_labels(X, samples.domain, k)]
        if prev is not None:
            starts.append(_split_worst(X, y, prev[0], prev[1], k))
        while len(starts) < restarts:
            starts.append(_cell_labels(X, samples.domain, k, rng))
        # rank raw alternation results, then polish only the winner; the
        # polished fit is never worse than the raw one it starts from
        cand = None
        for lab0 in starts:
            lab, W = _alternate(X, y, lab0, k, objective, iters)
            s = _score(X, y, W, objective)
            if cand is None or s < cand[2] - 1e-12:
                cand = (lab, W, s)
        lab, W, _ = _polish(X, y, cand[0], k, objective)
        s = _score(X, y, W, objective)
        if prev is None or s < prev[2] - 1e-12:
            prev = (lab, W, s)
    return prev[1], prev[2]


# -- one segment, fixed cells -----------------------------------------------

def _fit_cells(samples: SampleSet, cells: Sequence[Polytope], objective):
    X, y = samples.X, samples.values
    tol = 1e-9 * max(1.0, samples.domain.diameter)
    lab = np.full(len(X), -1)
    for q, cell in enumerate(cells):
        free = lab < 0
        lab[free & cell.contains(X, tol=tol)] = q
    if np.any(lab < 0):
        raise InputError("cells do not cover all samples")
    act_X, act_lab = [], []
    for q, cell in enumerate(cells):
        for v in cell.vertices:
            act_X.append(v)
            act_lab.append(q)
    group = {"X": X, "y": y, "labels": lab, "K": len(cells),
             "act_X": np.array(act_X), "act_labels": np.array(act_lab)}
    (W,), (r,) = _blocks_lp([group], objective, X.shape[1])
    return W, r


def fit_segment(samples: SampleSet, pieces: int, objective: str = LINF,
                cells: Optional[Sequence[Polytope]] = None, max_iterations: int = 50,
                seed: int = 0, restarts: int = 5) -> ConvexSegment:
    """Max-affine fit of one convex segment.

    Without ``cells`` the pieces are free (alternating assignment). The
    search grows the piece count from 1, and each stage keeps the previous
    stage's fit as a candidate, so the residual never increases with
    ``pieces``. Pieces that end up never active are dropped.

    With ``cells`` each piece is pinned to its cell and the cells become the
    subregions.
    """
    if objective not in OBJECTIVES:
        raise InputError(f"objective must be one of {OBJECTIVES}")
    n = samples.X.shape[1]
    if cells is not None:
        pieces = len(cells)
    if pieces < 1:
        raise InputError("need at least one piece")
    if len(samples) < pieces * (n + 1):
        raise InsufficientDataError(
            f"{len(samples)} samples cannot identify {pieces} pieces in dimension {n}")
    if cells is not None:
        W, resid = _fit_cells(samples, cells, objective)
        seg = ConvexSegment([AffineMap(w[:-1], w[-1]) for w in W], samples.domain, list(cells))
        seg.fixed_subregions = True
    else:
        W, _ = _fit_free(samples, pieces, objective, max_iterations, seed, restarts)
        W = W[np.lexsort(W[:, ::-1].T)]
        seg = ConvexSegment([AffineMap(w[:-1], w[-1]) for w in W], samples.domain)
        seg.fixed_subregions = False
    seg.residual = _max_resid(samples.X, samples.values, np.array([np.r_[p.a, p.b] for p in seg.pieces]))
    return seg


def fit_residual(seg: ConvexSegment, samples: SampleSet) -> float:
    return float(np.abs(seg(samples.X) - samples.values).max())


# -- whole surrogate ---------------------------------------------------------

def _piece_counts(config: FitConfig, count: int):
    pps = config.pieces_per_segment
    if isinstance(pps, str):
        if pps != "adaptive":
            raise InputError("pieces_per_segment must be a count, a list or 'adaptive'")
        return ["adaptive"] * count
    if isinstance(pps, (int, np.integer)):
        return [int(pps)] * count
    pps = list(pps)
    if len(pps) != count:
        raise InputError("need one piece count per partition region")
    return [int(p) for p in pps]


def _fit_adaptive(sub, config, seed):
    tol = config.adaptive_tol
    if tol is None:
        raise InputError("adaptive piece counts need adaptive_tol")
    seg = None
    for k in range(1, config.max_pieces + 1):
        if len(sub) < k * (sub.X.shape[1] + 1):
            break
        seg = fit_segment(sub, k, config.objective, max_iterations=config.max_iterations,
                          seed=seed, restarts=config.restarts)
        if seg.residual <= tol:
            break
    return seg


def _shared_points(ri: Polytope, rj: Polytope, count: int, rng):
    shared = ri.intersect(rj)
    V = shared.vertices
    if len(V) <= 1 or count <= len(V):
        return V
    w = rng.dirichlet(np.ones(len(V)), size=count - len(V))
    return np.vstack([V, w @ V])


def fit_mmps(F, config: FitConfig, domain: Polytope):
    """Fit one segment per partition region and join them continuously.

    Each region is fitted on its own samples (boundary samples belong to
    both neighbours). A joint LP then refits all segments with their
    settled assignments, with equality of the segment values imposed at the
    points of every shared boundary. In one dimension those boundaries are
    single points and the result is exactly continuous; in higher
    dimensions equality holds at the sampled boundary points.
    """
    if config.partition is not None:
        partition = list(config.partition)
    elif config.target_segment_count:
        partition = equal_cells(domain, config.target_segment_count)
    else:
        partition = [domain]
    for i in range(len(partition)):
        for j in range(i + 1, len(partition)):
            if interiors_intersect(partition[i], partition[j]):
                raise InputError(f"partition regions {i} and {j} overlap")
    res = config.resolution or default_fit_resolution(domain.dim)
    full = sample(F, domain, res)
    counts = _piece_counts(config, len(partition))
    rng = np.random.default_rng(config.seed)

    segs, groups = [], []
    for p, (region, k) in enumerate(zip(partition, counts)):
        extra = region.vertices
        X = np.unique(np.vstack([full.restrict(region).X, extra]), axis=0)
        sub = SampleSet(X, field_values(F, X), region, res, full.spacing)
        if config.fixed_cells and k != "adaptive":
            seg = fit_segment(sub, k, config.objective, cells=equal_cells(region, k))
        elif k == "adaptive":
            seg = _fit_adaptive(sub, config, config.seed + p)
        else:
            seg = fit_segment(sub, k, config.objective, max_iterations=config.max_iterations,
                              seed=config.seed + p, restarts=config.restarts)
        segs.append(seg)
        groups.append((sub, seg))

    if len(segs) > 1:
        segs = _join_continuous(groups, partition, config, rng)
    f = MmpsFunction(segs, domain)
    est = estimate_delta(F, f, domain, 2 * res)
    return f, est


def _join_continuous(groups, partition, config, rng):
    n = partition[0].dim
    blocks = []
    for sub, seg in groups:
        W = np.array([np.r_[p.a, p.b] for p in seg.pieces])
        lab = seg.active_piece(sub.X)
        block = {"X": sub.X, "y": sub.values, "labels": lab, "K": len(seg)}
        if getattr(seg, "fixed_subregions", False):
            ax, al = [], []
            for q, cell in enumerate(seg.subregions):
                for v in cell.vertices:
                    ax.append(v)
                    al.append(q)
            block["act_X"], block["act_labels"] = np.array(ax), np.array(al)
        blocks.append(block)
    eqs = []
    for i in range(len(partition)):
        for j in range(i + 1, len(partition)):
            if not intersects(partition[i], partition[j]):
                continue
            Z = _shared_points(partition[i], partition[j], 100, rng)
            if not len(Z):
                continue
            li = groups[i][1].active_piece(Z)
            lj = groups[j][1].active_piece(Z)
            eqs.append((i, Z, li, j, Z, lj))
            # keep the chosen pieces active at the shared points
            for g, lab in ((i, li), (j, lj)):
                b = blocks[g]
                b["act_X"] = np.vstack([b.get("act_X", b["X"]), Z])
                b["act_labels"] = np.concatenate([b.get("act_labels", b["labels"]), lab])
    blocks[0]["_eq"] = eqs
    Ws, _ = _blocks_lp(blocks, config.objective, n)
    out = []
    for (sub, seg), W in zip(groups, Ws):
        fixed = getattr(seg, "fixed_subregions", False)
        new = ConvexSegment([AffineMap(w[:-1], w[-1]) for w in W], seg.region,
                            list(seg.subregions) if fixed else None)
        new.fixed_subregions = fixed
        new.residual = fit_residual(new, sub)
        out.append(new)
    return out


# -- refinement ---------------------------------------------------------------

def initial_cell_count(domain: Polytope, target_chi: float, limit: int = 10_000,
                       strict: bool = True) -> int:
    """Smallest equal-cell count whose cell diameter is below the target.

    With ``strict=False`` a cell diameter equal to the target is accepted.
    """
    diam = domain.diameter
    if target_chi >= diam:
        return 1
    tol = 1e-9 * max(1.0, diam)
    for k in range(2, limit):
        worst = max(c.diameter for c in equal_cells(domain, k))
        if worst < target_chi if strict else worst <= target_chi + tol:
            return k
    raise InputError("target radius needs more cells than the search limit")


@dataclass
class RefinementStep:
    cells: int
    delta: float
    c1: Optional[float]
    max_subregion_diam: float
    bound: float
    degenerate: bool

    def to_dict(self):
        return dict(self.__dict__)


def refine_to_radius(F, domain: Polytope, target_chi: float, config: Optional[FitConfig] = None,
                     diameter_budget: Optional[float] = None):
    """Refit on finer equal cells until the certified radius meets the target.

    The loop starts at the smallest cell count whose cell diameter is below
    the target (the radius can never drop below the largest subregion
    diameter) and moves to the next uniform cell count while the certified
    radius is too large.

    ``diameter_budget`` reserves part of the target for the error term: the
    largest subregion must then also fit within the budget, and the loop
    starts at the first cell count whose cells do.

    Returns the surrogate and the report of the final fit, whose ``history``
    lists the refinement steps. ``verified`` is false if the iteration
    budget runs out.
    """
    if target_chi <= 0:
        raise InputError("target radius must be positive")
    if diameter_budget is not None and not 0 < diameter_budget <= target_chi:
        raise InputError("diameter budget must lie in (0, target]")
    config = config or FitConfig()
    res = config.resolution or default_fit_resolution(domain.dim)
    samples = sample(F, domain, res)
    if diameter_budget is None:
        k = initial_cell_count(domain, target_chi)
        budget = math.inf
    else:
        k = initial_cell_count(domain, diameter_budget, strict=False)
        budget = diameter_budget + 1e-9 * max(1.0, domain.diameter)

    def meets(step):
        return step.bound <= target_chi and step.max_subregion_diam <= budget

    history = []
    best = None
    for _ in range(config.max_refinements):
        try:
            if k == 1:
                seg = fit_segment(samples, 1, config.objective)
            else:
                seg = fit_segment(samples, k, config.objective, cells=equal_cells(domain, k))
        except InsufficientDataError:
            if best is None:
                raise
            log.info("refine: %d cells exceed the sample budget, stopping", k)
            break
        f = MmpsFunction([seg], domain)
        delta = estimate_delta(F, f, domain, 2 * res).delta
        lb = lower_bound_modulus(seg)
        bound = lb.diam if lb.degenerate else theorem_bound(lb, delta)
        step = RefinementStep(k, delta, lb.c1, lb.zero_radius, bound, lb.degenerate)
        history.append(step)
        log.info("refine: %d cells, delta %.4g, c1 %s, bound %.4g", k, delta, lb.c1, bound)
        if best is None or bound < best[2].bound:
            best = (seg, f, step)
        if meets(step):
            best = (seg, f, step)
            break
        k += 1
    seg, f, step = best
    success = meets(step)
    report = verify_bound(F, seg, radius=step.bound, delta=step.delta)
    report.verified = bool(success and report.verified)
    report.history = [h.to_dict() for h in history]
    return f, report
