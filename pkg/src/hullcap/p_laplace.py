"""p-capacitary potentials on grids, their capacities and IMCF arrival times.

Discretisation
--------------
Unknowns sit at cell centres.  The energy ``int phi^(n-p) (|Du|^2 + eps^2)^(p/2)``
is the P1 finite element energy on the Kuhn triangulation of the
cell-centre lattice (each lattice cube split into n! simplices along
monotone axis paths), so at p = 2 it reproduces the standard 5/7-point
Laplacian.

The obstacle boundary is reconstructed below cell resolution from the mask:
the mask is smoothed by a narrow Gaussian and its 1/2 level set taken as the
boundary.  The truncation sphere is known exactly.  Axis edges crossing
either boundary use the shortened difference quotient to the crossing point
and every simplex is weighted by its exact volume fraction on the free side
of the linearly interpolated level function.  This removes the O(h)
staircase bias of plain node-in-mask Dirichlet conditions.

Nonlinearity is handled by lagged diffusivity: with the simplex weights
``a_T = (|g_T|^2 + eps^2)^((p-2)/2)`` frozen, the energy is a weighted graph
Laplacian on axis edges, solved by conjugate gradients preconditioned with
smoothed-aggregation AMG.  ``eps`` is driven down a geometric schedule.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.ndimage import binary_dilation, binary_erosion, gaussian_filter
from scipy.sparse.linalg import cg
from sklearn.base import BaseEstimator

from .field_core import (
    Grid,
    RegionMask,
    ScalarField,
    SolveReport,
    StudyTable,
    check_field,
    check_mask,
    measure_theoretic_interior,
    pair_total_variation,
)

__all__ = [
    "PLaplaceConfig",
    "PotentialField",
    "PotentialResult",
    "IMCFEstimate",
    "JValues",
    "ResidualField",
    "KuhnEnergy",
    "solve_potential",
    "capacity",
    "imcf_from_potential",
    "imcf_functional",
    "level_set_residual",
    "PCapacitySolver",
    "SupportLeakError",
]


def _default_eps():
    return tuple(10.0 ** -k for k in range(1, 7))


@dataclass(frozen=True)
class PLaplaceConfig:
    """Solver settings.

    ``inner_tol`` is the relative energy change that ends the lagged
    iterations at one regularisation level; ``max_outer`` caps their number.
    """

    p: float
    radii_schedule: tuple
    epsilon_schedule: tuple = field(default_factory=_default_eps)
    inner_tol: float = 1e-8
    max_outer: int = 60
    cg_tol: float = 1e-10
    smoothing: float = 0.7
    boundary: str = "subcell"

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        radii = tuple(float(r) for r in np.atleast_1d(self.radii_schedule))
        eps = tuple(float(e) for e in np.atleast_1d(self.epsilon_schedule))
        object.__setattr__(self, "radii_schedule", radii)
        object.__setattr__(self, "epsilon_schedule", eps)
        if not radii or not eps:
            raise ValueError("schedules must be nonempty")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii_schedule must be increasing")
        if any(b >= a for a, b in zip(eps, eps[1:])) or min(eps) < 0:
            raise ValueError("epsilon_schedule must be decreasing and nonnegative")
        if self.inner_tol <= 0 or self.max_outer < 1:
            raise ValueError("inner_tol must be positive and max_outer >= 1")
        if self.boundary not in ("subcell", "staircase"):
            raise ValueError("boundary must be 'subcell' or 'staircase'")


# ---------------------------------------------------------------- geometry helpers


def _positive_fraction(vals: Sequence[np.ndarray]) -> np.ndarray:
    """Volume fraction of a simplex where the linear interpolant is > 0.

    Uses the divided difference of t -> max(t, 0)^n over the vertex values,
    with a tiny deterministic perturbation separating ties.
    """
    k = len(vals)
    n = k - 1
    V = np.stack([np.asarray(v, dtype=float) for v in vals])
    scale = np.abs(V).max(axis=0) + 1e-300
    V = V + (np.arange(k) * 1e-7).reshape((k,) + (1,) * (V.ndim - 1)) * scale
    npos = (V > 0).sum(axis=0)

    def dd(W):
        s = 0.0
        for i in range(k):
            den = 1.0
            for j in range(k):
                if j != i:
                    den = den * (W[i] - W[j])
            s = s + np.where(W[i] > 0, W[i] ** n, 0.0) / den
        return s

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f = np.where(2 * npos <= k, dd(V), 1.0 - dd(-V))
    f = np.where(npos == 0, 0.0, np.where(npos == k, 1.0, f))
    return np.clip(np.nan_to_num(f, nan=0.0), 0.0, 1.0)


def _edge_pair(shape, ax):
    a = [slice(None)] * len(shape)
    b = [slice(None)] * len(shape)
    a[ax] = slice(0, -1)
    b[ax] = slice(1, None)
    return tuple(a), tuple(b)


class KuhnEnergy:
    """Discrete p-Dirichlet energy with Dirichlet data and cut boundaries.

    Parameters
    ----------
    grid : Grid
    fixed : bool array
        Nodes carrying Dirichlet values.
    values : float array
        Dirichlet values (used where ``fixed``).
    edge_fraction : list of arrays, optional
        Per axis, the fraction of each axis edge on the free side (1 for
        uncut edges).
    simplex_fraction : list of arrays, optional
        Per simplex path, the volume fraction on the free side.
    """

    def __init__(self, grid: Grid, fixed, values, edge_fraction=None, simplex_fraction=None):
        self.grid = grid
        self.shape = grid.dims
        self.n = grid.n
        self.h = grid.h
        self.fixed = np.asarray(fixed, bool)
        self.values = np.where(self.fixed, np.asarray(values, float), 0.0)
        self.perms = list(itertools.permutations(range(self.n)))
        self.vol = self.h ** self.n / math.factorial(self.n)
        cube = tuple(d - 1 for d in self.shape)
        self.ell = edge_fraction or [np.ones(tuple(d - 1 if i == ax else d
                                                   for i, d in enumerate(self.shape)))
                                     for ax in range(self.n)]
        self.frac = simplex_fraction or [np.ones(cube) for _ in self.perms]
        # per simplex: slices of the path edges
        self.paths = []
        for perm in self.perms:
            off = [0] * self.n
            sls = [None] * self.n
            for ax in perm:
                sls[ax] = tuple(slice(off[d], off[d] + self.shape[d] - 1) for d in range(self.n))
                off[ax] += 1
            self.paths.append(sls)
        self.phi_simplex = None
        if grid.conformal_factor is not None:
            phi = grid.conformal_factor
            self.phi_simplex = []
            for perm in self.perms:
                off = [0] * self.n
                acc = phi[tuple(slice(0, d - 1) for d in self.shape)].copy()
                for ax in perm:
                    off[ax] += 1
                    acc += phi[tuple(slice(o, o + d - 1) for o, d in zip(off, self.shape))]
                self.phi_simplex.append(acc / (self.n + 1))
        self._active = [f > 0 for f in self.frac]
        self._linear = None

    # -- energy -------------------------------------------------------
    def quotients(self, u):
        return [np.diff(u, axis=ax) / (self.h * self.ell[ax]) for ax in range(self.n)]

    def _density_weight(self, k, p):
        w = self.frac[k] * self.vol
        if self.phi_simplex is not None:
            w = w * self.phi_simplex[k] ** (self.n - p)
        return w

    def energy(self, u, p, eps=0.0):
        u = np.asarray(u, float).reshape(self.shape)
        D = self.quotients(u)
        total = 0.0
        for k, sls in enumerate(self.paths):
            g2 = sum(D[ax][sls[ax]] ** 2 for ax in range(self.n))
            dens = (g2 + eps * eps) ** (0.5 * p) if eps > 0 else g2 ** (0.5 * p)
            total += float((self._density_weight(k, p) * dens).sum())
        return total

    def edge_weights(self, u, p, eps):
        """Axis-edge conductances of the frozen-coefficient quadratic model."""
        D = self.quotients(u)
        W = [np.zeros_like(d) for d in D]
        for k, sls in enumerate(self.paths):
            g2 = sum(D[ax][sls[ax]] ** 2 for ax in range(self.n))
            with np.errstate(divide="ignore"):
                a = (g2 + eps * eps) ** (0.5 * (p - 2))
            a = np.where(self._active[k], a, 0.0) * self._density_weight(k, p)
            for ax in range(self.n):
                W[ax][sls[ax]] += a
        return np.concatenate([(W[ax] / (self.h * self.ell[ax]) ** 2).ravel()
                               for ax in range(self.n)])

    # -- linear algebra -----------------------------------------------
    def _setup_linear(self):
        idx = np.arange(int(np.prod(self.shape))).reshape(self.shape)
        A, B = [], []
        for ax in range(self.n):
            sa, sb = _edge_pair(self.shape, ax)
            A.append(idx[sa].ravel())
            B.append(idx[sb].ravel())
        a = np.concatenate(A)
        b = np.concatenate(B)
        free = ~self.fixed.ravel()
        fidx = np.full(free.size, -1, dtype=np.int64)
        fidx[free] = np.arange(int(free.sum()))
        ff = free[a] & free[b]
        fa = free[a] & ~free[b]
        fb = ~free[a] & free[b]
        nf = int(free.sum())
        ra, rb = fidx[a[ff]], fidx[b[ff]]
        m = int(ff.sum())
        rows = np.r_[ra, rb, np.arange(nf)]
        cols = np.r_[rb, ra, np.arange(nf)]
        codes = np.arange(rows.size, dtype=np.float64)
        pattern = sp.csr_matrix((codes + 1.0, (rows, cols)), shape=(nf, nf))
        pattern.sort_indices()
        perm = pattern.data.astype(np.int64) - 1
        self._linear = dict(a=a, b=b, free=free, fidx=fidx, ff=ff, fa=fa, fb=fb, nf=nf, m=m,
                            perm=perm, indices=pattern.indices.copy(),
                            indptr=pattern.indptr.copy())

    def system(self, w, u_flat):
        if self._linear is None:
            self._setup_linear()
        L = self._linear
        a, b, fidx = L["a"], L["b"], L["fidx"]
        nf = L["nf"]
        ff, fa, fb = L["ff"], L["fa"], L["fb"]
        diag = (np.bincount(fidx[a[ff]], w[ff], nf) + np.bincount(fidx[b[ff]], w[ff], nf)
                + np.bincount(fidx[a[fa]], w[fa], nf) + np.bincount(fidx[b[fb]], w[fb], nf))
        rhs = (np.bincount(fidx[a[fa]], w[fa] * u_flat[b[fa]], nf)
               + np.bincount(fidx[b[fb]], w[fb] * u_flat[a[fb]], nf))
        # isolated free nodes (all neighbours fixed with zero weight) keep a unit row
        diag = np.where(diag > 0, diag, 1.0)
        data = np.r_[-w[ff], -w[ff], diag][L["perm"]]
        A = sp.csr_matrix((data, L["indices"], L["indptr"]), shape=(nf, nf))
        return A, rhs, L["free"]


def _build_energy(grid: Grid, obstacle: RegionMask, centre, R, cfg: PLaplaceConfig) -> KuhnEnergy:
    g = grid
    rc = g.radius(centre)
    mask = obstacle.indicator
    outer = rc >= R
    edge = np.zeros(g.dims, bool)
    for ax in range(g.n):
        sl = [slice(None)] * g.n
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    if not outer[edge].all():
        raise ValueError(f"the truncation ball of radius {R} does not fit inside the grid")
    if cfg.boundary == "staircase":
        inner = mask.copy()
        if (inner & outer).any():
            raise ValueError(f"obstacle meets the truncation sphere of radius {R}")
        fixed = inner | outer
        return KuhnEnergy(g, fixed, inner.astype(float))
    sm = gaussian_filter(mask.astype(float), cfg.smoothing, mode="constant") - 0.5
    inner = mask | (sm >= 0)
    if binary_dilation(inner, iterations=1)[outer].any():
        raise ValueError(f"obstacle meets the truncation sphere of radius {R}")
    fixed = inner | outer
    ell = []
    for ax in range(g.n):
        A, B = _edge_pair(g.dims, ax)
        l = np.ones(np.diff(rc, axis=ax).shape)
        for X, Y in ((A, B), (B, A)):
            # X fixed inside the obstacle, Y free
            m = inner[X] & ~inner[Y] & ~outer[Y]
            with np.errstate(divide="ignore", invalid="ignore"):
                th = np.clip(sm[Y] / (sm[Y] - sm[X]), 0.05, 1.0)
            l[m] = np.where(sm[X][m] >= 0, th[m], 1.0)
            # Y beyond the truncation sphere, X free
            m = outer[Y] & ~outer[X] & ~inner[X]
            l[m] = np.clip((R - rc[X][m]) / (rc[Y][m] - rc[X][m]), 0.05, 1.0)
        ell.append(l)
    lev_obs = -sm
    lev_out = (R - rc) / g.h
    perms = list(itertools.permutations(range(g.n)))
    frac = []
    for perm in perms:
        off = [0] * g.n
        vo = [lev_obs[tuple(slice(0, d - 1) for d in g.dims)]]
        vr = [lev_out[tuple(slice(0, d - 1) for d in g.dims)]]
        for ax in perm:
            off[ax] += 1
            sl = tuple(slice(o, o + d - 1) for o, d in zip(off, g.dims))
            vo.append(lev_obs[sl])
            vr.append(lev_out[sl])
        frac.append(_positive_fraction(vo) * _positive_fraction(vr))
    return KuhnEnergy(g, fixed, inner.astype(float), ell, frac)


class PotentialField(ScalarField):
    """A potential together with the discrete energy it minimises."""

    def __init__(self, grid, values, stencil: Optional[KuhnEnergy] = None):
        super().__init__(grid, values)
        self.stencil = stencil


@dataclass
class PotentialResult:
    potential: PotentialField
    capacity: float
    per_radius: StudyTable
    report: SolveReport


def _minimise(energy: KuhnEnergy, u0: np.ndarray, p: float, cfg: PLaplaceConfig,
              report: SolveReport) -> np.ndarray:
    u = np.where(energy.fixed, energy.values, np.clip(u0, 0.0, 1.0)).ravel()
    total_iters = 0
    for eps in cfg.epsilon_schedule:
        E_old = energy.energy(u, p, eps)
        converged = False
        for it in range(cfg.max_outer):
            w = energy.edge_weights(u.reshape(energy.shape), p, eps)
            A, rhs, free = energy.system(w, u)
            ml = pyamg.smoothed_aggregation_solver(A, max_coarse=500)
            x, info = cg(A, rhs, x0=u[free], rtol=cfg.cg_tol, maxiter=1000,
                         M=ml.aspreconditioner())
            trial = u.copy()
            trial[free] = np.clip(x, 0.0, 1.0)
            E = energy.energy(trial, p, eps)
            step = 1.0
            # the quadratic model majorises the energy only for p <= 2
            while E > E_old * (1 + 1e-13) and step > 1e-4:
                step *= 0.5
                trial[free] = u[free] + step * (np.clip(x, 0.0, 1.0) - u[free])
                E = energy.energy(trial, p, eps)
            u = trial
            total_iters += 1
            rel = abs(E_old - E) / max(abs(E), 1e-300)
            report.residuals.append(float(E))
            E_old = E
            if rel <= cfg.inner_tol:
                converged = True
                break
        if not converged:
            report.notes.append(f"eps={eps:g}: stopped after {cfg.max_outer} lagged iterations")
    report.iterations += total_iters
    return u.reshape(energy.shape)


def _obstacle_centre(obstacle: RegionMask):
    X = obstacle.grid.coordinates()
    m = obstacle.indicator
    return tuple(float(x[m].mean()) for x in X)


def solve_potential(grid: Grid, obstacle: RegionMask, cfg: PLaplaceConfig, centre=None,
                    initial: Optional[np.ndarray] = None) -> PotentialResult:
    """Capacitary potential of ``obstacle`` relative to balls B(centre, R_k).

    For each radius of the schedule the regularised energy is minimised with
    u = 1 on the obstacle and u = 0 outside the ball; ``capacity`` is the
    unregularised energy at the largest radius.
    """
    check_mask(obstacle, grid)
    if not obstacle.indicator.any():
        raise ValueError("obstacle is empty")
    centre = _obstacle_centre(obstacle) if centre is None else tuple(centre)
    table = StudyTable(("R", "capacity"), metadata={"p": cfg.p, "centre": list(centre),
                                                    "boundary": cfg.boundary})
    report = SolveReport()
    u = None
    energy = None
    for R in cfg.radii_schedule:
        energy = _build_energy(grid, obstacle, centre, R, cfg)
        if u is None:
            if initial is not None:
                u = np.asarray(initial, float)
            else:
                rc = grid.radius(centre)
                r0 = float(rc[obstacle.indicator].max())
                u = np.clip((R - rc) / max(R - r0, grid.h), 0.0, 1.0)
        u = _minimise(energy, u, cfg.p, cfg, report)
        table.add(R, energy.energy(u, cfg.p))
    # intermediate regularisation levels only warm-start the next one
    last = f"eps={cfg.epsilon_schedule[-1]:g}:"
    report.converged = not any(note.startswith(last) for note in report.notes)
    report.gap = float("nan")
    report.message = "converged" if report.converged else "lagged iterations hit max_outer"
    caps = table.column("capacity")
    if np.any(np.diff(caps) > 1e-6 * caps[:-1]):
        report.notes.append("per-radius capacities not monotone within 1e-6")
    pot = PotentialField(grid, np.clip(u, 0.0, 1.0), energy)
    return PotentialResult(pot, float(caps[-1]), table, report)


def capacity(potential: ScalarField, p: float) -> float:
    """Energy of a potential, with the solver's stencil when it is attached."""
    check_field(potential, lo=0.0, hi=1.0, name="potential")
    stencil = getattr(potential, "stencil", None)
    if stencil is None:
        fixed = np.zeros(potential.grid.dims, bool)
        stencil = KuhnEnergy(potential.grid, fixed, np.zeros(potential.grid.dims))
    return stencil.energy(potential.values, p)


# ---------------------------------------------------------------- IMCF


@dataclass(frozen=True)
class IMCFEstimate:
    w: ScalarField
    hull: Optional[RegionMask]
    flagged: bool
    message: str = ""
    level: Optional[float] = None


def imcf_from_potential(potential: ScalarField, p: float, floor: float = 1e-12,
                        level: Optional[float] = None, window: int = 1,
                        obstacle: Optional[RegionMask] = None) -> IMCFEstimate:
    """w_p = -(p - 1) log max(u_p, floor) and the hull estimate {w_p <= level}.

    With ``level=None`` the level is scanned over [0, 4(p - 1)] and the one
    whose sublevel set (joined with the obstacle) has the least perimeter is
    kept.  For a convex obstacle that is level 0, i.e. the obstacle itself.
    If the potential is negligible everywhere off the obstacle (the symptom
    of a p-parabolic end), no hull is emitted.
    """
    check_field(potential, lo=0.0, hi=1.0, name="potential")
    if floor <= 0:
        raise ValueError("floor must be positive")
    u = potential.values
    w = -(p - 1) * np.log(np.maximum(u, floor))
    wf = ScalarField(potential.grid, w)
    off = u < 1.0 if obstacle is None else ~obstacle.indicator
    if not off.any() or u[off].max() <= 1e3 * floor:
        return IMCFEstimate(wf, None, True, "potential negligible off the obstacle")
    base = (u >= 1.0) if obstacle is None else obstacle.indicator
    if level is None:
        best = None
        for t in np.linspace(0.0, 4 * (p - 1), 81):
            per = pair_total_variation((w <= t) | base, potential.grid)
            if best is None or per < best[1] * (1 - 1e-9):
                best = (float(t), per)
        level = best[0]
    sub = RegionMask(potential.grid, (w <= level) | base)
    hull_est = measure_theoretic_interior(sub, window)
    if obstacle is not None:
        hull_est = hull_est | obstacle
    return IMCFEstimate(wf, hull_est, False, level=level)


class SupportLeakError(ValueError):
    pass


@dataclass(frozen=True)
class JValues:
    Jw: float
    Jv: float

    def __iter__(self):
        yield self.Jw
        yield self.Jv


def _grad(values: np.ndarray, h: float):
    return np.gradient(values, h)


def imcf_functional(w: ScalarField, v: ScalarField, window: RegionMask,
                    obstacle: Optional[RegionMask] = None) -> JValues:
    """J_w(v) = int_K |Dv| + v |Dw| for v = w and for the competitor v."""
    check_field(w)
    check_field(v, w.grid)
    check_mask(window, w.grid)
    K = window.indicator
    differ = np.abs(w.values - v.values) > 0
    inner = binary_erosion(K, iterations=1, border_value=0)
    if (differ & ~inner).any():
        raise SupportLeakError("competitor differs from w outside the interior of the window")
    if obstacle is not None:
        check_mask(obstacle, w.grid)
        if (binary_dilation(obstacle.indicator, iterations=1) & K).any():
            raise SupportLeakError("window meets the closure of the obstacle")
    g = w.grid
    dV = g.cell_volumes()
    phi = g.conformal_factor

    def norm(values):
        gr = _grad(values, g.h)
        nrm = np.sqrt(sum(c * c for c in gr))
        return nrm if phi is None else nrm / phi

    dw = norm(w.values)

    def J(values):
        dens = norm(values) + values * dw
        return float((dens * dV)[K].sum())

    return JValues(J(w.values), J(v.values))


class ResidualField(ScalarField):
    """Pointwise residual with a mask of the cells where it was evaluated."""

    def __init__(self, grid, values, valid):
        super().__init__(grid, values)
        self.valid = RegionMask(grid, valid)


def level_set_residual(w: ScalarField, grad_threshold: float = 1e-6) -> ResidualField:
    """div(Dw/|Dw|) - |Dw| in the metric of the grid (centred differences).

    In a conformal metric phi^2 * flat this reads
    phi^-n div(phi^(n-1) grad w / |grad w|) - |grad w| / phi.
    Cells with |grad w| below the threshold, and the two outer cell layers,
    are masked out and carry 0.
    """
    check_field(w)
    g = w.grid
    n = g.n
    gr = _grad(w.values, g.h)
    nrm = np.sqrt(sum(c * c for c in gr))
    phi = g.conformal_factor if g.conformal_factor is not None else np.ones(g.dims)
    ok = nrm > grad_threshold
    safe = np.where(ok, nrm, 1.0)
    div = sum(np.gradient(phi ** (n - 1) * gr[ax] / safe, g.h, axis=ax) for ax in range(n))
    res = div / phi ** n - nrm / phi
    valid = ok.copy()
    inner = np.zeros(g.dims, bool)
    inner[tuple(slice(2, d - 2) for d in g.dims)] = True
    valid &= inner
    # the divergence stencil reaches one cell: its neighbours must be valid too
    valid &= binary_erosion(ok, iterations=1, border_value=0)
    return ResidualField(g, np.where(valid, res, 0.0), valid)


class PCapacitySolver(BaseEstimator):
    """Estimator front end for :func:`solve_potential`.

    ``fit(obstacle)`` sets ``potential_``, ``capacity_``, ``per_radius_`` and
    ``report_``.
    """

    def __init__(self, p=1.5, radii=(1.0,), epsilon_schedule=None, inner_tol=1e-8, max_outer=60,
                 centre=None, boundary="subcell", smoothing=0.7):
        self.p = p
        self.radii = radii
        self.epsilon_schedule = epsilon_schedule
        self.inner_tol = inner_tol
        self.max_outer = max_outer
        self.centre = centre
        self.boundary = boundary
        self.smoothing = smoothing

    def _config(self) -> PLaplaceConfig:
        eps = self.epsilon_schedule if self.epsilon_schedule is not None else _default_eps()
        return PLaplaceConfig(self.p, tuple(self.radii), tuple(eps), self.inner_tol,
                              self.max_outer, boundary=self.boundary, smoothing=self.smoothing)

    def fit(self, X: RegionMask, y=None, initial=None):
        check_mask(X)
        res = solve_potential(X.grid, X, self._config(), self.centre, initial)
        self.result_ = res
        self.potential_ = res.potential
        self.capacity_ = res.capacity
        self.per_radius_ = res.per_radius
        self.report_ = res.report
        return self
