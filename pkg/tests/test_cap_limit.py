import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hullcap import shapes
from hullcap.cap_limit import (
    DEFAULT_P_SCHEDULE,
    LimitStudyError,
    SobolevData,
    capacity_ratio_factor,
    decay_bound,
    fit_decay_envelope,
    parabolicity_integral,
    run_limit_study,
    run_radial_limit_study,
    sharp_sobolev_constant,
)
from hullcap.field_core import Grid
from hullcap.warped_radial import cigar, flat, flat_ball_capacity


def test_sharp_sobolev_constants():
    assert sharp_sobolev_constant(2) == pytest.approx(1 / (2 * math.sqrt(math.pi)))
    assert sharp_sobolev_constant(3) == pytest.approx(1 / (3 * (4 * math.pi / 3) ** (1 / 3)))
    with pytest.raises(ValueError):
        sharp_sobolev_constant(1)


def test_sobolev_exponents():
    d = SobolevData.flat(3)
    assert d.p_star(1.5) == pytest.approx(3.0)
    assert d.q_p(1.5) == pytest.approx(2.0)
    assert d.derived(1.5)["C_np"] == pytest.approx(d.C_sob * 2 * 1.5 / 1.5)
    with pytest.raises(ValueError):
        d.p_star(3.0)


def test_capacity_ratio_factor_tends_to_one():
    for n in (2, 3):
        assert abs(capacity_ratio_factor(n, 1 + 2.0 ** -10) - 1) <= 1e-3


@given(st.floats(1.0005, 1.9), st.floats(1.0005, 1.9))
def test_capacity_ratio_factor_monotone_in_two_dimensions(p, q):
    lo, hi = sorted((p, q))
    assert capacity_ratio_factor(2, lo) <= capacity_ratio_factor(2, hi) + 1e-12


def test_capacity_ratio_factor_scales_with_sobolev_constant():
    base = capacity_ratio_factor(2, 1.5)
    assert capacity_ratio_factor(2, 1.5, 2 * sharp_sobolev_constant(2)) == pytest.approx(
        base * 2 ** (1 / 3))


def test_radial_flat_study_satisfies_chain():
    study = run_radial_limit_study(flat(3), 1.0)
    assert study.chain_ok and study.complete
    assert study.hull_perimeter == pytest.approx(4 * math.pi)
    caps = study.capacities.column("capacity")
    assert np.all(np.diff(caps) < 0)  # falls towards the sphere area from above
    assert np.all(caps >= study.hull_perimeter)
    p = DEFAULT_P_SCHEDULE[-1]
    assert study.limit_gap == pytest.approx(((3 - p) / (p - 1)) ** (p - 1) - 1, rel=1e-8)


def test_radial_cigar_study_is_parabolic():
    study = run_radial_limit_study(cigar(2), 1.0)
    assert not study.chain_ok
    assert any("parabolic" in f for f in study.flags)


@pytest.mark.parametrize("schedule", [(), (1.2, 1.5), (1.5, 1.0), (1.5, 1.5)])
def test_schedule_validation(schedule):
    with pytest.raises(ValueError):
        run_radial_limit_study(flat(3), 1.0, schedule)


def test_grid_study_matches_closed_form_and_chain():
    g = Grid.box(-1.05, 1.05, 128)
    disk = shapes.disk(0.4).mask(g)
    study = run_limit_study(g, disk, (1.5, 1.25), radii=(1.0,), centre=(0.0, 0.0),
                            oracle=lambda p: flat_ball_capacity(2, p, 0.4, 1.0))
    gaps = study.capacities.column("oracle_gap")
    assert np.all(np.abs(gaps) < 0.01)
    assert study.chain_ok
    assert study.hull_perimeter <= study.cap1_estimate * 1.02
    d = study.as_dict()
    assert d["complete"] and d["p_schedule"] == [1.5, 1.25]


def test_grid_study_keeps_partial_rows_on_failure():
    g = Grid.box(-1.05, 1.05, 64)
    disk = shapes.disk(0.4).mask(g)
    with pytest.raises(LimitStudyError) as info:
        run_limit_study(g, disk, (1.5, 1.25), radii=(1.0,), centre=(0.0, 0.0),
                        pcap_options={"boundary": "bogus"})
    assert not info.value.study.complete and len(info.value.study.capacities) == 0


def test_threaded_study_agrees_with_serial():
    g = Grid.box(-1.05, 1.05, 64)
    disk = shapes.disk(0.4).mask(g)
    kw = dict(radii=(1.0,), centre=(0.0, 0.0))
    a = run_limit_study(g, disk, (1.5, 1.3), **kw).capacities.column("capacity")
    b = run_limit_study(g, disk, (1.5, 1.3), n_jobs=2, **kw).capacities.column("capacity")
    # worker threads may reorder floating-point reductions; deterministic runs stay serial
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_parabolicity_integral_divergence():
    # flat plane, p = 2: integrand 1/(pi t) decays like t^-1, so the integral diverges
    plane = parabolicity_integral(lambda t: math.pi * t * t, 2.0)
    assert plane.diverges and plane.tail_slope == pytest.approx(-1.0)
    space = parabolicity_integral(lambda t: 4 / 3 * math.pi * t ** 3, 2.0)
    assert not space.diverges
    # closed form: int_1^inf (3/(4 pi))  t^-2 dt truncated at 1e6
    assert space.value == pytest.approx(3 / (4 * math.pi) * (1 - 1e-6), rel=1e-8)
    with pytest.raises(ValueError):
        parabolicity_integral(lambda t: t, 1.0)


def test_decay_bound_and_envelope():
    b = decay_bound(1.5, 3.0, 1.0, 2.0)
    assert b.exponent == pytest.approx(3.0)
    assert b.value == pytest.approx(1 / (1.5 * 0.5) * 2.0 ** -3)
    with pytest.warns(RuntimeWarning):
        assert decay_bound(2.995, 3.0, 1.0, [1.0, 2.0]).near_critical
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        decay_bound(1.5, 3.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        decay_bound(3.5, 3.0, 1.0, 1.0)
    r = np.geomspace(1, 50, 30)
    fit = fit_decay_envelope(r, 0.7 * r ** -3.0, 1.5, 3.0)
    assert fit["slope"] == pytest.approx(-3.0) and fit["constant"] == pytest.approx(0.7)
    assert fit["shape_ok"]


def test_default_schedule():
    assert DEFAULT_P_SCHEDULE[0] == 1.5 and DEFAULT_P_SCHEDULE[-1] == 1 + 2.0 ** -6
