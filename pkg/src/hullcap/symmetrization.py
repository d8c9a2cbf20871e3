"""Schwarz symmetrization, the Pólya–Szegő comparison and Dirichlet eigenvalues."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.ndimage import binary_erosion
from scipy.optimize import brentq
from scipy.sparse.linalg import cg, eigsh
from scipy.special import jv
from sklearn.base import BaseEstimator

from .field_core import (
    Grid,
    RegionMask,
    ScalarField,
    StudyTable,
    check_field,
    check_mask,
    unit_ball_volume,
    unit_sphere_area,
)

__all__ = [
    "Rearrangement",
    "distribution_function",
    "PolyaSzego",
    "polya_szego_check",
    "random_smooth_field",
    "polya_szego_campaign",
    "EigenResult",
    "EigenStagnationError",
    "dirichlet_laplacian",
    "first_eigenvalue",
    "ball_dirichlet_eigenvalue",
    "FaberKrahn",
    "faber_krahn_check",
    "SchwarzSymmetrizer",
]

# Gauss-Legendre nodes on [0, 1]; 6 points integrate the per-segment
# polynomials (degree <= n + 1) exactly for n <= 3
_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
_GL_X = (_GL_X + 1) / 2
_GL_W = _GL_W / 2


@dataclass
class Rearrangement:
    """Decreasing radial rearrangement F of a nonnegative field.

    ``t_samples`` decrease from max f to 0; ``V`` and ``rho`` are the
    distribution function and equal-volume radii at those levels, after
    merging levels with equal V (plateaus).  F is piecewise linear in rho
    through the points (rho_i, t_i).
    """

    t_samples: np.ndarray
    V: np.ndarray
    rho: np.ndarray
    n: int
    plateaus: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def radius(self) -> float:
        return float(self.rho[-1])

    def F(self, r):
        """Evaluate F at radii ``r`` (0 beyond the support ball)."""
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.rho, self.t_samples, left=self.t_samples[0], right=0.0)
        return float(out) if out.ndim == 0 else out

    def _segments(self):
        return self.rho[:-1], self.rho[1:], self.t_samples[:-1], self.t_samples[1:]

    def dirichlet_energy(self) -> float:
        """|S| int (F')^2 r^(n-1) dr, exact for the piecewise-linear F."""
        r0, r1, t0, t1 = self._segments()
        dr = r1 - r0
        ok = dr > 0
        slope2 = ((t1[ok] - t0[ok]) / dr[ok]) ** 2
        shell = (r1[ok] ** self.n - r0[ok] ** self.n) / self.n
        return float(unit_sphere_area(self.n) * np.sum(slope2 * shell))

    def lp_mass(self, q: float = 2.0) -> float:
        """|S| int F^q r^(n-1) dr by per-segment Gauss-Legendre quadrature."""
        r0, r1, t0, t1 = self._segments()
        r = r0[:, None] + (r1 - r0)[:, None] * _GL_X[None, :]
        vals = t0[:, None] + (t1 - t0)[:, None] * _GL_X[None, :]
        integrand = np.abs(vals) ** q * r ** (self.n - 1)
        total = np.sum((r1 - r0) * (integrand @ _GL_W))
        return float(unit_sphere_area(self.n) * total)

    def on_grid(self, grid: Grid, centre=None) -> ScalarField:
        return ScalarField(grid, self.F(grid.radius(centre)))


def _support_values(field_: ScalarField, support: RegionMask):
    f = field_.values
    inside = support.indicator
    if np.any(f[~inside] != 0):
        raise ValueError("field must vanish outside the support")
    if np.any(f[inside] < 0):
        raise ValueError("field must be nonnegative")
    return f[inside], field_.grid.cell_volumes()[inside]


def _ramp_sum(x: np.ndarray, w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """sum_c w_c (x_c - t)_+ at every level t."""
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    # suffix sums over cells with x_c > t
    sw = np.r_[np.cumsum(ws[::-1])[::-1], 0.0]
    swx = np.r_[np.cumsum((ws * xs)[::-1])[::-1], 0.0]
    k = np.searchsorted(xs, t, side="right")
    return swx[k] - t * sw[k]


def distribution_function(field_: ScalarField, support: RegionMask, t_count: int = 2048
                          ) -> Rearrangement:
    """V(t) = |{f >= t}| on a uniform t-grid over [0, max f], plus rho(t) and F.

    Each cell carries the linear reconstruction of the field: its values are
    spread uniformly over f_c -+ h |grad f| / 2 instead of sitting at f_c.
    Point values alone make V jitter with lattice counts, which inflates the
    energy of F at fine t-spacing.
    """
    check_field(field_)
    check_mask(support, field_.grid)
    if t_count < 2:
        raise ValueError("t_count must be at least 2")
    vals, vols = _support_values(field_, support)
    if vals.size == 0 or vals.max() <= 0:
        raise ValueError("field is identically zero")
    g = field_.grid
    n = g.n
    grads = np.gradient(field_.values, g.h)
    gnorm = np.sqrt(sum(gr * gr for gr in grads))[support.indicator]
    half = 0.5 * g.h * gnorm
    lo, hi = vals - half, vals + half
    T = float(hi.max())
    t = np.linspace(T, 0.0, t_count)
    spread = half > 0
    w = vols[spread] / (2 * half[spread])
    V = _ramp_sum(hi[spread], w, t) - _ramp_sum(lo[spread], w, t)
    flat = vals[~spread]
    if flat.size:
        fs = np.sort(flat)
        V = V + vols[~spread].mean() * (flat.size - np.searchsorted(fs, t, side="left"))
    V[-1] = float(vols.sum())
    V = np.maximum.accumulate(np.clip(V, 0.0, None))
    # keep, for each distinct V, the largest level attaining it
    keep = np.r_[True, np.diff(V) > 0]
    plateaus = int(np.count_nonzero(~keep))
    t_k, V_k = t[keep], V[keep]
    rho = (V_k / unit_ball_volume(n)) ** (1.0 / n)
    if rho[0] > 0:
        # F reaches max f only at the centre
        t_k, V_k, rho = np.r_[T, t_k], np.r_[0.0, V_k], np.r_[0.0, rho]
    return Rearrangement(t_k, V_k, rho, n, plateaus,
                         {"t_count": t_count, "plateau_levels_merged": plateaus,
                          "convention": "largest level kept on each plateau of V",
                          "cell_model": "linear reconstruction"})


def _dirichlet_energy(values: np.ndarray, grid: Grid) -> float:
    """Sum over lattice edges of squared differences, zero extension outside the grid."""
    h = grid.h
    total = 0.0
    for ax in range(values.ndim):
        padded = np.pad(values, [(1, 1) if i == ax else (0, 0) for i in range(values.ndim)])
        d = np.diff(padded, axis=ax)
        total += float(np.sum(d * d))
    return total * h ** (grid.n - 2)


@dataclass(frozen=True)
class PolyaSzego:
    lhs: float
    rhs: float
    l2_defect: float
    holds: bool


def polya_szego_check(field_: ScalarField, support: RegionMask, C_g: float = 1.0,
                      t_count: int = 2048, tol: float = 5e-3,
                      boundary_tol: float = 0.05) -> PolyaSzego:
    """Compare the lattice Dirichlet energy of f with C_g^(2/n) times that of F.

    The field is extended by zero outside ``support``; its values on the
    support's boundary cells must stay below ``boundary_tol`` times its
    maximum.  ``l2_defect`` is the relative mismatch of the L2 masses.
    ``holds`` allows a relative shortfall ``tol`` for lattice discretisation
    error, which is what radial fields (equality cases) show.
    """
    check_field(field_)
    check_mask(support, field_.grid)
    if not 0 < C_g <= 1:
        raise ValueError("C_g must lie in (0, 1]")
    g = field_.grid
    f = field_.values
    inside = support.indicator
    ring = inside & ~binary_erosion(inside, border_value=0)
    if f.max() > 0 and np.max(np.abs(f[ring]), initial=0.0) > boundary_tol * f.max():
        raise ValueError("field does not vanish on the support boundary")
    rear = distribution_function(field_, support, t_count)
    lhs = _dirichlet_energy(f, g)
    rhs = C_g ** (2.0 / g.n) * rear.dirichlet_energy()
    mass = float(np.sum(f * f * g.cell_volumes()))
    defect = abs(mass - rear.lp_mass(2.0)) / mass
    return PolyaSzego(lhs, rhs, defect, bool(lhs >= rhs * (1 - tol)))


def random_smooth_field(grid: Grid, rng: np.random.Generator, bumps: int = 5) -> ScalarField:
    """Gaussian mixture on the unit square times sin(pi x) sin(pi y) (vanishes on the edge)."""
    X, Y = grid.coordinates()
    f = np.zeros(grid.dims)
    for _ in range(bumps):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        s = rng.uniform(0.05, 0.25)
        a = rng.uniform(0.2, 1.0)
        f += a * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * s * s))
    inside = (X > 0) & (X < 1) & (Y > 0) & (Y < 1)
    f = np.where(inside, f * np.sin(np.pi * X) * np.sin(np.pi * Y), 0.0)
    return ScalarField(grid, np.maximum(f, 0.0))


def polya_szego_campaign(trials: int = 100, cells: int = 512, seed: int = 0,
                         t_count: int = 2048, C_g: float = 1.0) -> StudyTable:
    """Seeded campaign of random smooth fields on the unit square."""
    grid = Grid((cells, cells), 1.0 / cells, origin=(0.0, 0.0))
    support = RegionMask(grid, np.ones(grid.dims, dtype=bool))
    table = StudyTable(("trial", "lhs", "rhs", "l2_defect", "holds"),
                       metadata={"cells": cells, "seed": seed, "t_count": t_count, "C_g": C_g})
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        f = random_smooth_field(grid, rng)
        res = polya_szego_check(f, support, C_g, t_count)
        table.add(k, res.lhs, res.rhs, res.l2_defect, res.holds)
    return table


# ---------------------------------------------------------------- eigenvalues


class EigenStagnationError(RuntimeError):
    pass


@dataclass
class EigenResult:
    lambda1: float
    eigenfield: ScalarField
    iterations: int
    rayleigh: float

    def __iter__(self):
        yield self.lambda1
        yield self.eigenfield


def dirichlet_laplacian(support: RegionMask):
    """5-point (7-point in 3D) Dirichlet Laplacian on the support cells.

    The boundary sits on the cell faces: a neighbour outside the support is
    a ghost value -u, so the face contributes 2/h^2.  Returns (matrix, index
    array of the support cells).
    """
    g = support.grid
    m = support.indicator
    idx = -np.ones(g.dims, dtype=np.int64)
    cells = np.flatnonzero(m.ravel())
    idx.ravel()[cells] = np.arange(cells.size)
    h2 = g.h ** 2
    diag = np.zeros(cells.size)
    rows, cols = [], []
    for ax in range(g.n):
        for step in (1, -1):
            nb = np.roll(idx, -step, axis=ax)
            edge = [slice(None)] * g.n
            edge[ax] = -1 if step == 1 else 0
            nb[tuple(edge)] = -1
            own = idx[m]
            other = nb[m]
            inner = other >= 0
            rows.append(own[inner])
            cols.append(other[inner])
            diag += np.where(inner, 1.0, 2.0)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    A = sp.csr_matrix((np.full(r.size, -1.0 / h2), (r, c)), shape=(cells.size, cells.size))
    A = A + sp.diags(diag / h2)
    return A.tocsr(), cells


def first_eigenvalue(support: RegionMask, grid: Optional[Grid] = None, tol: float = 1e-8,
                     max_iter: int = 500, check_eigsh: bool = False) -> EigenResult:
    """Smallest Dirichlet eigenvalue by inverse iteration with AMG-preconditioned CG."""
    check_mask(support, grid)
    g = support.grid
    if not support.indicator.any():
        raise ValueError("empty support")
    A, cells = dirichlet_laplacian(support)
    ml = pyamg.smoothed_aggregation_solver(A, max_coarse=500)
    M = ml.aspreconditioner()
    x = np.ones(cells.size)
    x /= np.linalg.norm(x)
    lam_old = math.inf
    for it in range(1, max_iter + 1):
        y, info = cg(A, x, x0=x * (1 / lam_old if math.isfinite(lam_old) else 0.0),
                     rtol=1e-12, maxiter=2000, M=M)
        if info < 0:
            raise EigenStagnationError(f"linear solve failed (info={info})")
        x = y / np.linalg.norm(y)
        lam = float(x @ (A @ x))
        if abs(lam - lam_old) <= tol * lam:
            break
        lam_old = lam
    else:
        raise EigenStagnationError(f"no convergence to {tol:g} in {max_iter} iterations")
    if check_eigsh:
        ref = float(eigsh(A, k=1, sigma=0, which="LM", return_eigenvectors=False)[0])
        if abs(ref - lam) > 1e-6 * lam:
            raise EigenStagnationError(f"inverse iteration {lam} disagrees with eigsh {ref}")
    x = x if x.sum() >= 0 else -x
    values = np.zeros(g.dims)
    values.ravel()[cells] = x
    values /= math.sqrt(float(np.sum(values ** 2 * g.cell_volumes())))
    return EigenResult(lam, ScalarField(g, values), it, lam)


def ball_dirichlet_eigenvalue(n: int, radius: float = 1.0) -> float:
    """j^2 / radius^2 with j the first zero of the Bessel function of order n/2 - 1."""
    if n < 1 or radius <= 0:
        raise ValueError("need n >= 1 and radius > 0")
    if n == 1:
        j = math.pi / 2
    elif n == 3:
        j = math.pi
    else:
        nu = n / 2 - 1
        # the first zero lies between nu and nu + 2 sqrt(nu + 1) + 2
        a, b = max(nu, 0.5), nu + 2 * math.sqrt(nu + 1) + 2
        xs = np.linspace(a, b, 400)
        vals = jv(nu, xs)
        k = int(np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0])
        j = brentq(lambda s: jv(nu, s), xs[k], xs[k + 1], xtol=1e-15)
    return j * j / radius ** 2


@dataclass(frozen=True)
class FaberKrahn:
    lambda1: float
    bound: float
    holds: bool


def faber_krahn_check(support: RegionMask, grid: Optional[Grid] = None, avr: float = 1.0,
                      tol: float = 1e-2, lambda1: Optional[float] = None) -> FaberKrahn:
    """lambda_1(support) against avr^(2/n) lambda_1 of the equal-volume flat ball."""
    check_mask(support, grid)
    if not 0 < avr <= 1:
        raise ValueError("avr must lie in (0, 1]")
    n = support.grid.n
    lam = first_eigenvalue(support).lambda1 if lambda1 is None else float(lambda1)
    radius = (support.volume / unit_ball_volume(n)) ** (1 / n)
    bound = avr ** (2 / n) * ball_dirichlet_eigenvalue(n, radius)
    return FaberKrahn(lam, bound, bool(lam >= bound * (1 - tol)))


class SchwarzSymmetrizer(BaseEstimator):
    """``fit(field, support)`` builds the rearrangement; ``transform`` samples it on a grid."""

    def __init__(self, t_count=2048, centre=None):
        self.t_count = t_count
        self.centre = centre

    def fit(self, X: ScalarField, y: Optional[RegionMask] = None):
        support = y if y is not None else RegionMask(X.grid, X.values > 0)
        self.rearrangement_ = distribution_function(X, support, self.t_count)
        self.support_volume_ = float(self.rearrangement_.V[-1])
        return self

    def transform(self, X) -> ScalarField:
        grid = X.grid if hasattr(X, "grid") else X
        return self.rearrangement_.on_grid(grid, self.centre)
