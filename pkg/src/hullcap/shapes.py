"""Named planar shape presets with exact geometric reference values."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull
from skimage.measure import points_in_poly

from .field_core import Grid, RegionMask

__all__ = ["Shape", "disk", "square", "star", "dumbbell", "cross", "blob", "ball",
           "PRESETS", "make_shape"]


@dataclass(frozen=True)
class Shape:
    """A planar polygon (or a disk / ball given analytically)."""

    name: str
    polygon: np.ndarray | None = None
    radius: float | None = None
    centre: tuple = (0.0, 0.0)
    dim: int = 2

    def mask(self, grid: Grid) -> RegionMask:
        if grid.n != self.dim:
            raise ValueError(f"{self.name} is {self.dim}-dimensional, grid is {grid.n}-dimensional")
        if self.radius is not None:
            return RegionMask(grid, grid.radius(self.centre) <= self.radius)
        X, Y = grid.coordinates()
        pts = np.c_[X.ravel(), Y.ravel()]
        inside = points_in_poly(pts, self.polygon)
        return RegionMask(grid, inside.reshape(grid.dims))

    @property
    def perimeter(self) -> float:
        if self.radius is not None:
            if self.dim == 2:
                return 2 * math.pi * self.radius
            return 4 * math.pi * self.radius ** 2
        d = np.diff(np.vstack([self.polygon, self.polygon[:1]]), axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    @property
    def area(self) -> float:
        if self.radius is not None:
            if self.dim == 2:
                return math.pi * self.radius ** 2
            return 4 / 3 * math.pi * self.radius ** 3
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    @property
    def hull_perimeter(self) -> float:
        """Perimeter of the convex hull (the planar hull of a connected set)."""
        if self.radius is not None:
            return self.perimeter
        return float(ConvexHull(self.polygon).area)

    @property
    def hull_area(self) -> float:
        if self.radius is not None:
            return self.area
        return float(ConvexHull(self.polygon).volume)

    def convex_hull_shape(self) -> "Shape":
        if self.radius is not None:
            return self
        hv = ConvexHull(self.polygon).vertices
        return Shape(self.name + "-hull", self.polygon[hv])


def _shift(poly, centre):
    return np.asarray(poly, dtype=float) + np.asarray(centre, dtype=float)


def disk(radius=0.5, centre=(0.0, 0.0)) -> Shape:
    return Shape("disk", radius=float(radius), centre=tuple(centre))


def ball(radius=0.5, centre=(0.0, 0.0, 0.0)) -> Shape:
    return Shape("ball", radius=float(radius), centre=tuple(centre), dim=3)


def square(side=1.0, centre=(0.0, 0.0)) -> Shape:
    a = side / 2
    return Shape("square", _shift([[-a, -a], [a, -a], [a, a], [-a, a]], centre))


def star(k=5, amplitude=0.35, radius=0.7, centre=(0.0, 0.0)) -> Shape:
    """Polygon alternating between ``radius`` and ``(1 - amplitude) * radius``."""
    if k < 3 or not 0 < amplitude < 1:
        raise ValueError("star needs k >= 3 and 0 < amplitude < 1")
    t = np.arange(2 * k) * np.pi / k + np.pi / 2
    r = np.where(np.arange(2 * k) % 2 == 0, radius, (1 - amplitude) * radius)
    return Shape(f"star({k},{amplitude})", _shift(np.c_[r * np.cos(t), r * np.sin(t)], centre))


def dumbbell(gap=0.5, bar_width=0.1, side=0.4, centre=(0.0, 0.0)) -> Shape:
    """Two squares of the given side joined by a bar spanning the gap."""
    a, b, w = side, gap, bar_width / 2
    x0 = b / 2
    poly = [[-x0 - a, -a / 2], [-x0, -a / 2], [-x0, -w], [x0, -w], [x0, -a / 2],
            [x0 + a, -a / 2], [x0 + a, a / 2], [x0, a / 2], [x0, w], [-x0, w], [-x0, a / 2],
            [-x0 - a, a / 2]]
    return Shape(f"dumbbell({gap},{bar_width})", _shift(poly, centre))


def cross(arm=0.6, width=0.25, centre=(0.0, 0.0)) -> Shape:
    """Plus sign with half-length ``arm`` and bar width ``width``."""
    a, w = arm, width / 2
    poly = [[-a, -w], [-w, -w], [-w, -a], [w, -a], [w, -w], [a, -w], [a, w], [w, w], [w, a],
            [-w, a], [-w, w], [-a, w]]
    return Shape("cross", _shift(poly, centre))


def blob(coeffs=((3, 0.15),), radius=0.6, centre=(0.0, 0.0), samples=4096) -> Shape:
    """Polar graph r(t) = radius * (1 + sum_k a_k cos(k t))."""
    t = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    r = np.ones_like(t)
    for k, a in coeffs:
        r += a * np.cos(int(k) * t)
    if np.any(r <= 0):
        raise ValueError("blob radius function must stay positive")
    r *= radius
    return Shape("blob", _shift(np.c_[r * np.cos(t), r * np.sin(t)], centre))


PRESETS = {"disk": disk, "square": square, "star": star, "dumbbell": dumbbell,
           "cross": cross, "blob": blob, "ball": ball}


def make_shape(name: str, **params) -> Shape:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown shape preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
