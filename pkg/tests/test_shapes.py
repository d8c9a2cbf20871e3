import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hullcap import shapes
from hullcap.field_core import Grid


def test_square_reference_values():
    sq = shapes.square(2.0)
    assert sq.perimeter == pytest.approx(8.0) and sq.area == pytest.approx(4.0)
    assert sq.hull_perimeter == pytest.approx(8.0) and sq.hull_area == pytest.approx(4.0)


@given(st.integers(3, 9), st.floats(0.05, 0.6), st.floats(0.2, 0.8))
def test_star_hull_is_shorter_and_larger(k, amplitude, radius):
    star = shapes.star(k, amplitude, radius)
    assert star.hull_perimeter <= star.perimeter + 1e-12
    assert star.hull_area >= star.area - 1e-12
    assert star.convex_hull_shape().hull_area == pytest.approx(star.hull_area)


def test_analytic_disk_and_ball():
    assert shapes.disk(0.5).perimeter == pytest.approx(math.pi)
    assert shapes.ball(0.5).area == pytest.approx(math.pi / 6)
    g = Grid.box(-1.0, 1.0, 128)
    assert shapes.disk(0.5).mask(g).volume == pytest.approx(math.pi / 4, rel=0.01)
    with pytest.raises(ValueError):
        shapes.ball(0.5).mask(g)


def test_polygon_mask_area():
    g = Grid.box(-1.0, 1.0, 256)
    for name in ("star", "cross", "dumbbell", "blob"):
        s = shapes.make_shape(name)
        assert s.mask(g).volume == pytest.approx(s.area, rel=0.02)


def test_preset_lookup():
    assert set(shapes.PRESETS) == {"disk", "square", "star", "dumbbell", "cross", "blob", "ball"}
    with pytest.raises(ValueError):
        shapes.make_shape("hexagon")
    assert np.allclose(shapes.make_shape("disk", centre=(0.1, 0.2)).centre, (0.1, 0.2))
