import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pwa_sens.bench import reference_segment
from pwa_sens.errors import EmptyRegionError, InputError, UnboundedRegionError
from pwa_sens.polytope import (Polytope, diameter, equal_cells, grid_points,
                               interiors_intersect, intersects, is_feasible)


def test_feasible_interval():
    assert is_feasible(Polytope([[1.0], [-1.0]], [1.0, 0.0]))


def test_infeasible_interval():
    assert not is_feasible(Polytope([[1.0], [-1.0]], [0.0, -1.0]))


def test_adjacent_subregions_of_three_piece_surrogate_touch():
    seg = reference_segment("f3-1")
    assert is_feasible(seg.subregions[0].intersect(seg.subregions[1]))


def test_feasibility_in_two_dimensions():
    tri = Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert is_feasible(tri)
    assert not is_feasible(tri.add_halfspace([1, 1], -0.5))


def test_malformed_halfspaces():
    with pytest.raises(InputError):
        Polytope([[1.0, 0.0]], [1.0, 2.0])
    with pytest.raises(InputError):
        Polytope.from_halfspaces([[[1.0], 1.0], [[1.0, 0.0], 1.0]])


def test_diameter_interval():
    assert diameter(Polytope.interval(-330, -180)) == pytest.approx(150.0)


def test_diameter_input_box():
    d = diameter(Polytope.box([-20, -20], [20, 20]))
    assert d == pytest.approx(40 * math.sqrt(2), rel=1e-12)
    assert abs(d - 56.4) <= 0.3


def test_diameter_single_point():
    assert diameter(Polytope.box([1.0, 2.0], [1.0, 2.0])) == 0.0
    assert diameter(Polytope.interval(3.0, 3.0)) == 0.0


def test_unbounded_and_empty():
    with pytest.raises(UnboundedRegionError):
        diameter(Polytope([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]))
    with pytest.raises(UnboundedRegionError):
        diameter(Polytope([[1.0]], [1.0]))
    with pytest.raises(EmptyRegionError):
        diameter(Polytope([[1.0], [-1.0]], [0.0, -1.0]))


def test_intersects_closed_intervals():
    assert intersects(Polytope.interval(0, 1), Polytope.interval(1, 2))
    assert not intersects(Polytope.interval(0, 1), Polytope.interval(2, 3))
    assert not interiors_intersect(Polytope.interval(0, 1), Polytope.interval(1, 2))
    assert interiors_intersect(Polytope.interval(0, 1.5), Polytope.interval(1, 2))


def test_intersects_dimension_mismatch():
    with pytest.raises(InputError):
        intersects(Polytope.interval(0, 1), Polytope.box([0, 0], [1, 1]))


def test_eight_piece_subregions_touch_only_neighbours():
    seg = reference_segment("f3-2")
    subs = seg.subregions
    for i in range(len(subs)):
        for j in range(i + 1, len(subs)):
            assert intersects(subs[i], subs[j]) == (j == i + 1), (i, j)


def test_vertices_of_triangle():
    tri = Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    V = tri.vertices
    assert len(V) == 3
    assert np.all(V @ tri.A.T <= tri.b + 1e-8)
    assert tri.diameter == pytest.approx(math.sqrt(2))


def test_grid_points_and_cells():
    X, h = grid_points(Polytope.interval(0, 1), 5)
    assert np.allclose(X[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
    assert h[0] == pytest.approx(0.25)
    cells = equal_cells(Polytope.box([-20, -20], [20, 20]), 24)
    assert len(cells) == 24
    assert max(c.diameter for c in cells) == pytest.approx(math.hypot(40 / 4, 40 / 6))


def test_json_halfspace_layout_round_trips():
    p = Polytope.box([0, -1], [2, 3])
    q = Polytope.from_halfspaces(p.to_halfspaces())
    assert np.allclose(p.A, q.A) and np.allclose(p.b, q.b)


boxes = st.lists(st.tuples(st.floats(-50, 50), st.floats(0.1, 40)), min_size=1, max_size=3)


@settings(max_examples=60, deadline=None)
@given(boxes, st.integers(0, 2 ** 31 - 1))
def test_cuts_never_increase_diameter(dims, seed):
    lo = np.array([s[0] for s in dims])
    hi = lo + np.array([s[1] for s in dims])
    box = Polytope.box(lo, hi)
    rng = np.random.default_rng(seed)
    normal = rng.standard_normal(len(lo))
    centre = 0.5 * (lo + hi)
    cut = box.add_halfspace(normal, float(normal @ centre) + rng.uniform(-0.2, 1.0))
    if cut.is_empty:
        return
    assert cut.diameter <= box.diameter * (1 + 1e-9)


@settings(max_examples=60, deadline=None)
@given(boxes)
def test_box_diameter_closed_form(dims):
    lo = np.array([s[0] for s in dims])
    width = np.array([s[1] for s in dims])
    box = Polytope.box(lo, lo + width)
    assert box.diameter == pytest.approx(float(np.linalg.norm(width)), rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5), st.floats(0, 5))
def test_intersects_is_symmetric(a, wa, b, wb):
    p, q = Polytope.interval(a, a + wa), Polytope.interval(b, b + wb)
    assert intersects(p, q) == intersects(q, p)
