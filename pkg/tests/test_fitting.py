import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pwa_sens.bench import (C3, EGGHOLDER_PARTITION, EGGHOLDER_PIECES, eggholder_1d,
                            partition_1d, reference_surrogate)
from pwa_sens.errors import EvaluationError, InputError, InsufficientDataError
from pwa_sens.fitting import (FitConfig, estimate_delta, fit_mmps, fit_segment,
                              initial_cell_count, refine_to_radius, sample)
from pwa_sens.mmps import MmpsFunction, validate
from pwa_sens.modulus import lower_bound_modulus, theorem_bound
from pwa_sens.polytope import Polytope, equal_cells, grid_points

C = Polytope.interval(*C3)


@pytest.fixture(scope="module")
def egg_samples():
    return sample(eggholder_1d, C, 1501)


def smooth_field(seed):
    rng = np.random.default_rng(seed)
    amp, freq, phase = rng.uniform(0.2, 2, 3), rng.uniform(0.3, 3, 3), rng.uniform(0, 6, 3)

    def F(X):
        x = np.asarray(X, dtype=float).reshape(-1)
        return (amp[:, None] * np.sin(freq[:, None] * x[None, :] + phase[:, None])).sum(0)
    return F


# -- sampling -----------------------------------------------------------------

def test_sample_constant():
    s = sample(lambda X: np.full(len(X), 3.0), Polytope.interval(0, 1), 5)
    assert len(s) == 5
    assert np.all(s.values == 3.0)


def test_sample_eggholder_range(egg_samples):
    assert len(egg_samples) == 1501
    assert egg_samples.values.min() == pytest.approx(-280, abs=10)
    assert egg_samples.values.max() == pytest.approx(225, abs=10)


def test_sample_single_point():
    s = sample(lambda X: X[:, 0], Polytope.interval(2.0, 2.0), 7)
    assert len(s) == 1 and s.values[0] == 2.0


def test_sample_two_dimensional_points_stay_inside():
    tri = Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    s = sample(lambda X: X.sum(1), tri, 21)
    assert np.all(tri.contains(s.X, tol=1e-9))
    assert len(s) > 3


def test_sample_non_finite_value():
    with pytest.raises(EvaluationError) as info:
        sample(lambda X: np.where(X[:, 0] > 0.5, np.nan, 0.0), Polytope.interval(0, 1), 5)
    assert info.value.point is not None


# -- single segment -----------------------------------------------------------

def test_affine_data_is_fitted_exactly():
    s = sample(lambda X: 2 * X[:, 0] - 1, Polytope.interval(-3, 4), 101)
    for k in (1, 3):
        assert fit_segment(s, k).residual == pytest.approx(0.0, abs=1e-9)
    s2 = sample(lambda X: X @ [1.0, -2.0] + 0.5, Polytope.box([0, 0], [1, 1]), 11)
    assert fit_segment(s2, 2).residual == pytest.approx(0.0, abs=1e-9)


def test_three_piece_fit_of_eggholder(egg_samples):
    seg = fit_segment(egg_samples, 3)
    assert seg.residual == pytest.approx(19.9, rel=0.10)


def test_eight_piece_fit_of_eggholder(egg_samples):
    seg = fit_segment(egg_samples, 8)
    assert seg.residual == pytest.approx(2.6, rel=0.10)


def test_three_piece_fit_slopes_close_to_reference(egg_samples):
    seg = fit_segment(egg_samples, 3)
    assert np.allclose(seg.slopes[:, 0], [-7.8, -0.9, 6.1], atol=0.1)
    assert seg.residual < 19.9


def test_fixed_cells_fit(egg_samples):
    seg = fit_segment(egg_samples, 0, cells=equal_cells(C, 16))
    assert len(seg) == 16
    assert seg.fixed_subregions
    assert seg.subregion_diameters().max() == pytest.approx(150 / 16)
    assert seg.residual == pytest.approx(2.47, rel=0.15)


def test_insufficient_data():
    s = sample(lambda X: X[:, 0], Polytope.interval(0, 1), 5)
    with pytest.raises(InsufficientDataError):
        fit_segment(s, 3)


def test_bad_objective(egg_samples):
    with pytest.raises(InputError):
        fit_segment(egg_samples, 2, objective="l2")


def test_l1_objective_runs(egg_samples):
    seg = fit_segment(egg_samples, 3, objective="l1")
    assert np.isfinite(seg.residual)


# -- whole surrogates ---------------------------------------------------------

def test_affine_field_over_partition():
    part = partition_1d([0, 1, 2.5, 4])
    f, est = fit_mmps(lambda X: 3 * X[:, 0] + 1, FitConfig(partition=part, pieces_per_segment=2),
                      Polytope.interval(0, 4))
    assert est.delta == pytest.approx(0.0, abs=1e-9)
    assert validate(f).valid


@pytest.fixture(scope="module")
def five_region():
    cfg = FitConfig(partition=partition_1d(EGGHOLDER_PARTITION),
                    pieces_per_segment=list(EGGHOLDER_PIECES), resolution=2049)
    return fit_mmps(eggholder_1d, cfg, Polytope.interval(-512, 512))


def test_five_region_fit_is_valid(five_region):
    f, est = five_region
    rep = validate(f)
    assert rep.valid
    assert rep.max_jump <= 1e-6
    # pieces that are never active are dropped
    assert all(1 <= len(s) <= k for s, k in zip(f.segments, EGGHOLDER_PIECES))


def test_five_region_minimizers_at_outer_boundaries(five_region):
    f, _ = five_region
    mins = []
    for seg in f.segments:
        X, _ = grid_points(seg.region, 4001)
        mins.append(X[np.argmin(seg(X)), 0])
    assert mins[0] == pytest.approx(-512, abs=1)
    assert mins[4] == pytest.approx(512, abs=1)


@pytest.fixture(scope="module")
def fifteen_cells():
    cfg = FitConfig(pieces_per_segment=15, fixed_cells=True, resolution=1501)
    return fit_mmps(eggholder_1d, cfg, C)


def test_fifteen_equal_cells_error(fifteen_cells):
    f, est = fifteen_cells
    assert est.delta == pytest.approx(2.83, rel=0.25)


def test_fifteen_equal_cells_slope_gap(fifteen_cells):
    f, est = fifteen_cells
    assert lower_bound_modulus(f.segments[0]).c1 == pytest.approx(0.0072, rel=0.25)


def test_overlapping_partition_rejected():
    part = [Polytope.interval(0, 2), Polytope.interval(1, 3)]
    with pytest.raises(InputError):
        fit_mmps(lambda X: X[:, 0], FitConfig(partition=part), Polytope.interval(0, 3))


# -- error estimation ---------------------------------------------------------

def test_delta_of_identical_functions():
    f = reference_surrogate("f3-1")
    assert estimate_delta(f, f, C, 1000).delta == 0.0


def test_delta_of_three_piece_reference():
    est = estimate_delta(eggholder_1d, reference_surrogate("f3-1"), C, 20000)
    assert est.delta == pytest.approx(19.9, abs=1.0)


def test_delta_of_eight_piece_reference():
    est = estimate_delta(eggholder_1d, reference_surrogate("f3-2"), C, 20000)
    assert est.delta == pytest.approx(2.6, abs=0.5)


def test_delta_reports_argmax_and_padding():
    f = reference_surrogate("f3-1")
    est = estimate_delta(eggholder_1d, f, C, 1000)
    x = est.argmax_point[0]
    assert abs(f(np.array([x]))[0] - eggholder_1d(x)) == pytest.approx(est.delta)
    padded = estimate_delta(eggholder_1d, f, C, 1000, lipschitz=20.0)
    assert padded.padded
    assert padded.delta == pytest.approx(est.delta + 0.5 * 20.0 * 0.15)


# -- refinement ---------------------------------------------------------------

def test_initial_cell_counts():
    assert initial_cell_count(C, 200.0) == 1
    assert initial_cell_count(C, 15.0) == 11
    assert initial_cell_count(C, 10.0) == 16
    assert initial_cell_count(C, 10.0, strict=False) == 15


def test_refine_with_large_target_uses_one_fit():
    f, rep = refine_to_radius(eggholder_1d, C, 150.0)
    assert len(rep.history) == 1
    assert rep.history[0]["cells"] == 1
    assert rep.verified


@pytest.fixture(scope="module")
def refined():
    return refine_to_radius(eggholder_1d, C, 15.0, diameter_budget=10.0)


def test_refine_to_fifteen(refined):
    f, rep = refined
    assert rep.verified
    assert rep.max_subregion_diam <= 10 + 1e-9
    assert rep.chi_theorem <= 15
    assert rep.chi_theorem == pytest.approx(14.24, abs=1.0)
    assert rep.delta == pytest.approx(2.47, rel=0.15)
    assert rep.c1 == pytest.approx(1.03, rel=0.15)


def test_refine_to_fifteen_ends_with_sixteen_cells(refined):
    f, rep = refined
    assert rep.history[-1]["cells"] == 16


def test_fifteen_equal_cells_bound_exceeds_region(refined):
    f, rep = refined
    first = rep.history[0]
    assert first["cells"] == 15
    assert first["bound"] > 150


def test_refine_without_budget_meets_target():
    f, rep = refine_to_radius(eggholder_1d, C, 15.0)
    assert rep.verified
    assert rep.chi_theorem <= 15
    assert rep.history[0]["cells"] == 11


def test_refine_reports_failure_when_budget_runs_out():
    cfg = FitConfig(max_refinements=2, resolution=301)
    f, rep = refine_to_radius(eggholder_1d, C, 3.0, cfg)
    assert not rep.verified
    assert len(rep.history) == 2


def test_refine_stops_when_samples_run_out():
    cfg = FitConfig(max_refinements=10, resolution=24)
    f, rep = refine_to_radius(eggholder_1d, C, 14.0, cfg)
    assert not rep.verified
    assert [h["cells"] for h in rep.history] == [11, 12]


def test_refine_rejects_bad_targets():
    with pytest.raises(InputError):
        refine_to_radius(eggholder_1d, C, 0.0)
    with pytest.raises(InputError):
        refine_to_radius(eggholder_1d, C, 5.0, diameter_budget=6.0)


# -- properties ---------------------------------------------------------------

seeds = st.integers(0, 2 ** 31 - 1)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_fitted_surrogates_are_continuous(seed):
    rng = np.random.default_rng(seed)
    edges = np.sort(np.r_[0.0, rng.uniform(0.5, 9.5, int(rng.integers(1, 4))), 10.0])
    if np.min(np.diff(edges)) < 0.3:
        return
    part = partition_1d(edges)
    cfg = FitConfig(partition=part, pieces_per_segment=int(rng.integers(1, 4)),
                    resolution=201, seed=seed % 1000)
    f, _ = fit_mmps(smooth_field(seed), cfg, Polytope.interval(0, 10))
    assert validate(f).valid


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(5, 400))
def test_denser_grid_never_lowers_delta(seed, res):
    F = smooth_field(seed)
    f = reference_surrogate("f3-1")
    region = Polytope.interval(-330, -180)

    def shifted(X):
        return F(np.asarray(X) / 15.0) * 40 + eggholder_1d(X)
    a = estimate_delta(shifted, f, region, res).delta
    b = estimate_delta(shifted, f, region, 2 * res).delta
    assert b >= a - 1e-12


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_residual_non_increasing_in_piece_count(seed):
    s = sample(smooth_field(seed), Polytope.interval(0, 10), 201)
    res = [fit_segment(s, k, restarts=2).residual for k in range(1, 6)]
    assert all(b <= a + 1e-9 for a, b in zip(res, res[1:]))


@settings(max_examples=5, deadline=None)
@given(seeds, st.floats(1.5, 8.0))
def test_successful_refinement_meets_target(seed, target):
    cfg = FitConfig(resolution=201, max_refinements=6)
    f, rep = refine_to_radius(smooth_field(seed), Polytope.interval(0, 10), target, cfg)
    if rep.verified:
        seg = f.segments[0]
        assert theorem_bound(lower_bound_modulus(seg), rep.delta) <= target


def test_refit_reproduces_delta(egg_samples):
    a = fit_segment(egg_samples, 4, seed=3)
    b = fit_segment(egg_samples, 4, seed=3)
    assert abs(a.residual - b.residual) <= 1e-9
    cfg = FitConfig(pieces_per_segment=3, resolution=301)
    _, e1 = fit_mmps(eggholder_1d, cfg, C)
    _, e2 = fit_mmps(eggholder_1d, cfg, C)
    assert abs(e1.delta - e2.delta) <= 1e-9
