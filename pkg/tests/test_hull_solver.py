import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import binary_dilation
from sklearn.base import clone

from hullcap import shapes
from hullcap.field_core import Grid, RegionMask, measure
from hullcap.hull_solver import (
    DomainTooSmallError,
    HullSolver,
    ObstacleProblem,
    SolverFailure,
    hull,
    is_outward_minimising,
)


def grown(a, layers=1):
    return binary_dilation(a, iterations=layers)


@pytest.fixture(scope="module")
def grid96():
    return Grid.box(-1.0, 1.0, 96)


@pytest.fixture(scope="module")
def star_fit(grid96):
    star = shapes.star(5, 0.35, 0.6)
    return star, HullSolver().fit(star.mask(grid96))


def test_star_hull_matches_convex_hull_oracle(star_fit):
    star, solver = star_fit
    assert solver.report_.converged
    assert solver.hull_perimeter_ == pytest.approx(star.hull_perimeter, rel=0.03)


def test_hull_contains_obstacle_and_shortens_it(grid96, star_fit):
    star, solver = star_fit
    obstacle = star.mask(grid96).indicator
    assert np.all(~obstacle | solver.hull_.indicator)
    assert solver.hull_perimeter_ < measure(star.mask(grid96))["perimeter"]
    assert solver.hull_volume_ == pytest.approx(solver.hull_.volume)


def test_relaxed_solution_in_unit_interval(star_fit):
    u = star_fit[1].relaxed_.values
    assert u.min() >= -1e-12 and u.max() <= 1 + 1e-12


def test_convex_obstacle_is_its_own_hull(grid96):
    m = shapes.disk(0.5).mask(grid96)
    H = HullSolver().fit(m).hull_.indicator
    assert np.all(H <= grown(m.indicator)) and np.all(m.indicator <= H)


def test_hull_is_idempotent(grid96, star_fit):
    H = star_fit[1].hull_
    H2 = HullSolver().fit(H).hull_.indicator
    assert np.all(H2 <= grown(H.indicator)) and np.all(H.indicator <= grown(H2))


@settings(max_examples=6)
@given(st.floats(0.1, 0.25), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_hull_is_monotone_under_inclusion(radius, x, y):
    g = Grid.box(-1.0, 1.0, 64)
    A = shapes.cross(0.5, 0.2).mask(g)
    B = A | shapes.disk(radius, (x, y)).mask(g)
    solver = HullSolver()
    HA = solver.fit(A).hull_.indicator
    HB = solver.fit(B).hull_.indicator
    assert np.all(HA <= grown(HB))


def test_outward_minimising_verdicts(grid96):
    disk_test = is_outward_minimising(shapes.disk(0.5).mask(grid96))
    verdict, gap = disk_test
    assert verdict and abs(gap) < 0.01
    dumbbell = is_outward_minimising(shapes.dumbbell().mask(grid96))
    assert not dumbbell.verdict and dumbbell.gap > 0.05
    with pytest.raises(ValueError):
        is_outward_minimising(shapes.disk(0.5).mask(grid96), tol=0)


def test_obstacle_touching_band_is_rejected():
    g = Grid.box(-1.0, 1.0, 32)
    with pytest.raises(DomainTooSmallError):
        HullSolver().fit(shapes.square(1.98).mask(g))


def test_problem_validation(grid96):
    m = shapes.disk(0.5).mask(grid96)
    with pytest.raises(ValueError):
        ObstacleProblem(grid96, m, gap_tol=0)
    with pytest.raises(ValueError):
        ObstacleProblem(grid96, RegionMask(grid96, np.zeros(grid96.dims, bool)))
    with pytest.raises(TypeError):
        HullSolver().fit(m.indicator)


def test_iteration_cap_raises_when_requested(grid96):
    m = shapes.star().mask(Grid.box(-1.0, 1.0, 96))
    with pytest.raises(SolverFailure) as info:
        HullSolver(max_iters=2, multilevel=False, raise_on_failure=True).fit(m)
    assert info.value.report is not None and not info.value.report.converged
    quiet = HullSolver(max_iters=2, multilevel=False).fit(m)
    assert not quiet.report_.converged


def test_estimator_protocol(grid96):
    est = HullSolver(gap_tol=1e-3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    m = shapes.disk(0.4).mask(grid96)
    assert est.transform(m) == est.hull_
    assert hull(m, gap_tol=1e-3).hull == est.hull_


def test_three_dimensional_ball():
    g = Grid.box(-1.0, 1.0, 32, n=3)
    b = shapes.ball(0.5).mask(g)
    res = HullSolver().fit(b)
    assert np.all(b.indicator <= res.hull_.indicator)
    assert res.hull_volume_ <= grown(b.indicator).sum() * g.h ** 3
