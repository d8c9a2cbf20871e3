"""Isoperimetric ratios, constrained isoperimetric profiles and the conical comparison.

Constrained minimisers are computed by volume-preserving threshold dynamics:
the indicator is convolved with a Gaussian and the ``k`` container cells
with the largest response become the next set, so the volume is exact to one
cell.  Several starting shapes are evolved and the least-area result kept.
Areas of such sets are measured as the length (2D) or mesh area (3D) of the
1/2-contour of the indicator lightly smoothed, which is isotropic; cells
outside the container count as outside, so area along the wall counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter
from skimage.measure import find_contours, marching_cubes, mesh_surface_area
from sklearn.base import BaseEstimator

from .field_core import RegionMask, check_mask, measure, unit_ball_volume, unit_sphere_area
from .warped_radial import WarpedProfile, avr, ball_volume, sphere_area

__all__ = [
    "iso_ratio",
    "radial_iso_ratio",
    "sharp_iso_constant",
    "conical_profile",
    "isotropic_area",
    "ConstrainedResult",
    "constrained_isoperimetric",
    "IsoProfile",
    "isoperimetric_profile",
    "square_container_profile",
    "DiniResult",
    "dini_comparison",
    "ThinBoundaryError",
    "CurvatureReport",
    "mean_curvature_bounds_check",
    "ConstrainedIsoperimetric",
    "avr_sharp_constant",
]


# ---------------------------------------------------------------- ratios


def iso_ratio(mask: RegionMask) -> float:
    """P^n / V^(n-1) with the lattice perimeter of :func:`measure`."""
    check_mask(mask)
    m = measure(mask)
    if m["volume"] <= 0:
        raise ValueError("iso_ratio of an empty set")
    n = mask.grid.n
    return m["perimeter"] ** n / m["volume"] ** (n - 1)


def radial_iso_ratio(profile: WarpedProfile, rho: float) -> float:
    """P^n / V^(n-1) of the ball {rho' <= rho} of a warped product, by quadrature."""
    n = profile.n
    return sphere_area(profile, rho) ** n / ball_volume(profile, rho) ** (n - 1)


def sharp_iso_constant(n: int, avr_value: float = 1.0) -> float:
    """AVR * |S^(n-1)|^n / |B^n|^(n-1), the lower bound on P^n / V^(n-1)."""
    return avr_value * unit_sphere_area(n) ** n / unit_ball_volume(n) ** (n - 1)


def conical_profile(v, W: float, n: int):
    """n^((n-1)/n) W^(1/n) v^((n-1)/n): the profile of a cone with link area W."""
    if W <= 0:
        raise ValueError("W must be positive")
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("volumes must be nonnegative")
    out = n ** ((n - 1) / n) * W ** (1 / n) * v ** ((n - 1) / n)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- isotropic area


def isotropic_area(mask: RegionMask, smoothing: float = 1.0) -> float:
    """Length / area of the 1/2-contour of the Gaussian-smoothed indicator."""
    check_mask(mask)
    g = mask.grid
    pad = int(math.ceil(4 * smoothing)) + 2
    f = gaussian_filter(np.pad(mask.indicator.astype(float), pad), smoothing, mode="constant")
    if g.n == 2:
        total = 0.0
        for c in find_contours(f, 0.5):
            d = np.diff(c, axis=0)
            total += float(np.hypot(d[:, 0], d[:, 1]).sum())
        return total * g.h
    if g.n == 3:
        if f.max() <= 0.5:
            return 0.0
        verts, faces, _, _ = marching_cubes(f, 0.5)
        return float(mesh_surface_area(verts, faces)) * g.h ** 2
    raise ValueError("isotropic_area supports 2D and 3D grids")


# ---------------------------------------------------------------- constrained sets


@dataclass
class ConstrainedResult:
    set: RegionMask
    area: float
    multiplier: float
    start: str
    candidates: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.set
        yield self.area
        yield self.multiplier


def _ball_start(coords, centre, volume_scale, v, container):
    n = len(coords)
    r = (v * volume_scale / unit_ball_volume(n)) ** (1 / n)
    d2 = sum((x - c) ** 2 for x, c in zip(coords, centre))
    return container & (d2 <= r * r)


def _starts(container: np.ndarray, grid, v: float, k: int) -> dict:
    """Candidate initial sets: centred ball, wall- and corner-attached balls, eroded container."""
    coords = grid.coordinates()
    inside = [x[container] for x in coords]
    lo = [float(x.min()) for x in inside]
    hi = [float(x.max()) for x in inside]
    mid = [(a + b) / 2 for a, b in zip(lo, hi)]
    n = grid.n
    out = {
        "ball": _ball_start(coords, mid, 1.0, v, container),
        "wall": _ball_start(coords, [lo[0]] + mid[1:], 2.0, v, container),
        "corner": _ball_start(coords, lo, 2.0 ** n, v, container),
    }
    dist = distance_transform_edt(container)
    level = np.sort(dist[container])[::-1][k - 1]
    out["eroded"] = dist >= level
    return out


def _threshold_dynamics(chi: np.ndarray, container_idx: np.ndarray, k: int,
                        sigmas: Sequence[float], max_iter: int) -> tuple:
    iters = 0
    for s in sigmas:
        for _ in range(max_iter):
            resp = gaussian_filter(chi.astype(float), s, mode="constant").ravel()
            top = np.argsort(-resp[container_idx], kind="stable")[:k]
            new = np.zeros(chi.size, dtype=bool)
            new[container_idx[top]] = True
            new = new.reshape(chi.shape)
            iters += 1
            if np.array_equal(new, chi):
                break
            chi = new
    return chi, iters


def constrained_isoperimetric(container: RegionMask, v: float, *,
                              sigmas: Sequence[float] = (6.0, 4.0, 3.0, 2.0, 1.5),
                              max_iter: int = 300, smoothing: float = 1.0,
                              starts: Optional[dict] = None) -> ConstrainedResult:
    """Least-area subset of ``container`` with volume ``v``.

    ``sigmas`` is the kernel-width schedule in cells.  ``starts`` may supply
    extra named initial masks.  The multiplier is the mean curvature of the
    free boundary of the winner (NaN when it has none).
    """
    check_mask(container)
    g = container.grid
    U = container.indicator
    vol_U = container.volume
    if not 0 < v < vol_U:
        raise ValueError(f"volume must lie in (0, {vol_U:g})")
    cell = g.h ** g.n
    k = int(round(v / cell))
    if k < 1 or abs(k * cell - v) / v > 1e-3:
        raise ValueError("volume not representable to 1e-3 on this grid; refine it")
    idx = np.flatnonzero(U.ravel())
    inits = _starts(U, g, v, k)
    if starts:
        inits.update({name: check_mask(m, g).indicator & U for name, m in starts.items()})
    best = None
    candidates = {}
    for name in sorted(inits):
        chi, _ = _threshold_dynamics(inits[name], idx, k, sigmas, max_iter)
        area = isotropic_area(RegionMask(g, chi), smoothing)
        candidates[name] = area
        if best is None or area < best[1] * (1 - 1e-12):
            best = (name, area, chi)
    result_set = RegionMask(g, best[2])
    try:
        mult = mean_curvature_bounds_check(result_set, container).mean
    except ThinBoundaryError:
        mult = math.nan
    return ConstrainedResult(result_set, best[1], mult, best[0], candidates)


@dataclass
class IsoProfile:
    container: RegionMask
    volumes: np.ndarray
    areas: np.ndarray
    multipliers: np.ndarray
    reports: list = field(default_factory=list)

    def __post_init__(self):
        self.volumes = np.asarray(self.volumes, dtype=float)
        self.areas = np.asarray(self.areas, dtype=float)
        self.multipliers = np.asarray(self.multipliers, dtype=float)
        if np.any(np.diff(self.volumes) <= 0):
            raise ValueError("volumes must be increasing")
        if np.any(self.areas <= 0):
            raise ValueError("areas must be positive")

    @property
    def n(self) -> int:
        return self.container.grid.n


def isoperimetric_profile(container: RegionMask, volumes, **options) -> IsoProfile:
    """Sample the constrained profile v -> I(v) at increasing ``volumes``."""
    vols = np.asarray(volumes, dtype=float)
    results = [constrained_isoperimetric(container, float(v), **options) for v in vols]
    return IsoProfile(container, vols, [r.area for r in results],
                      [r.multiplier for r in results],
                      [{"start": r.start, "candidates": r.candidates} for r in results])


def square_container_profile(v, side: float = 1.0):
    """Exact profile of a square container (wall counted): disks, then rounded squares.

    A centred disk is optimal while it fits; beyond that the optimum is the
    square with corners rounded by quarter circles of radius
    sqrt((side^2 - v) / (4 - pi)).
    """
    v = np.asarray(v, dtype=float)
    s2 = side * side
    if np.any((v <= 0) | (v > s2)):
        raise ValueError("volume outside (0, side^2]")
    disk = 2 * np.sqrt(np.pi * v)
    r = np.sqrt(np.maximum(s2 - v, 0) / (4 - np.pi))
    rounded = 4 * side - (8 - 2 * np.pi) * r
    out = np.where(v <= np.pi * s2 / 4, disk, rounded)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- Dini comparison


@dataclass(frozen=True)
class DiniResult:
    increments: np.ndarray
    monotone_ok: bool
    tolerance: float


def dini_comparison(profile, W: Optional[float] = None, tol: float = 1e-3) -> DiniResult:
    """Increments of I^(n/(n-1)) - conical^(n/(n-1)) along the sampled volumes.

    ``profile`` is an :class:`IsoProfile` or a ``(volumes, areas, n)`` tuple.
    ``W`` defaults to the flat |S^(n-1)|.  An increment below
    ``-tol * max I^(n/(n-1))`` fails the check.
    """
    if isinstance(profile, IsoProfile):
        vols, areas, n = profile.volumes, profile.areas, profile.n
    else:
        vols, areas, n = profile
        vols, areas = np.asarray(vols, float), np.asarray(areas, float)
    if len(vols) < 2:
        raise ValueError("need at least two profile samples")
    W = unit_sphere_area(n) if W is None else W
    e = n / (n - 1)
    diff = areas ** e - conical_profile(vols, W, n) ** e
    inc = np.diff(diff)
    bound = tol * float(np.max(areas ** e))
    return DiniResult(inc, bool(np.all(inc >= -bound)), bound)


# ---------------------------------------------------------------- curvature diagnostics


class ThinBoundaryError(ValueError):
    """The free boundary has no cells with enough clearance from the container wall."""


@dataclass
class CurvatureReport:
    mean: float
    spread: float
    constant: bool
    samples: int
    wall_min_curvature: float
    above_wall: Optional[bool]
    message: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _level_set_curvature(f: np.ndarray, h: float) -> np.ndarray:
    """-div(grad f / |grad f|): positive on convex parts of a superlevel set."""
    grads = np.gradient(f, h)
    norm = np.sqrt(sum(gr * gr for gr in grads)) + 1e-12
    return -sum(np.gradient(gr / norm, h, axis=i) for i, gr in enumerate(grads))


def mean_curvature_bounds_check(set_mask: RegionMask, container: RegionMask,
                                smoothing: float = 2.0, clearance: int = 3,
                                spread_tol: float = 0.15) -> CurvatureReport:
    """Curvature of the free boundary of a constrained set, as a diagnostic.

    The indicator is smoothed by a Gaussian of ``smoothing`` cells and the
    level-set curvature is sampled on the 1/2-contour cells that lie at least
    ``clearance`` cells inside the container.  ``spread`` is the 5-95%
    quantile range over the mean; ``constant`` means spread <= spread_tol.
    The wall curvature minimum is sampled the same way on the container.
    """
    check_mask(set_mask)
    check_mask(container, set_mask.grid)
    g = set_mask.grid
    E, U = set_mask.indicator, container.indicator
    if (E & ~U).any():
        raise ValueError("set leaves the container")
    if not E.any():
        raise ValueError("empty set")
    if np.array_equal(E, U):
        return CurvatureReport(math.nan, math.nan, True, 0, math.nan, None, "empty free boundary")
    fE = gaussian_filter(E.astype(float), smoothing, mode="constant")
    fU = gaussian_filter(U.astype(float), smoothing, mode="constant")
    wall_dist = distance_transform_edt(U)
    band = (np.abs(fE - 0.5) < 0.25)
    free = band & (wall_dist >= clearance + smoothing)
    if not free.any():
        raise ThinBoundaryError("free boundary has under "
                                f"{clearance} cells of clearance from the container wall")
    kappa = _level_set_curvature(fE, g.h)[free]
    mean = float(np.mean(kappa))
    q5, q95 = np.quantile(kappa, [0.05, 0.95])
    spread = float((q95 - q5) / abs(mean)) if mean != 0 else math.inf
    wall = np.abs(fU - 0.5) < 0.25
    wall_min = float(np.min(_level_set_curvature(fU, g.h)[wall])) if wall.any() else math.nan
    above = None if math.isnan(wall_min) else bool(mean >= wall_min)
    return CurvatureReport(mean, spread, bool(spread <= spread_tol), int(free.sum()),
                           wall_min, above)


# ---------------------------------------------------------------- estimator


class ConstrainedIsoperimetric(BaseEstimator):
    """Estimator wrapper: ``fit(container)`` samples the profile at ``volumes``.

    ``volumes`` may be absolute or, with ``relative=True``, fractions of the
    container volume.
    """

    def __init__(self, volumes=(0.25, 0.5, 0.75), relative=True,
                 sigmas=(6.0, 4.0, 3.0, 2.0, 1.5), max_iter=300, smoothing=1.0):
        self.volumes = volumes
        self.relative = relative
        self.sigmas = sigmas
        self.max_iter = max_iter
        self.smoothing = smoothing

    def fit(self, X: RegionMask, y=None):
        check_mask(X)
        vols = np.asarray(self.volumes, dtype=float)
        if self.relative:
            vols = vols * X.volume
        self.profile_ = isoperimetric_profile(X, vols, sigmas=tuple(self.sigmas),
                                              max_iter=self.max_iter, smoothing=self.smoothing)
        self.volumes_ = self.profile_.volumes
        self.areas_ = self.profile_.areas
        self.multipliers_ = self.profile_.multipliers
        return self

    def dini(self, W: Optional[float] = None, tol: float = 1e-3) -> DiniResult:
        return dini_comparison(self.profile_, W, tol)


def avr_sharp_constant(profile: WarpedProfile) -> float:
    """Sharp isoperimetric constant AVR * |S|^n / |B|^(n-1) of a warped product."""
    return sharp_iso_constant(profile.n, avr(profile))
