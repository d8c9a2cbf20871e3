"""Least perimeter envelopes of an obstacle and the outward minimising hull.

The set problem ``min P(F) over F containing the obstacle`` is relaxed to

    min TV(u)   subject to   chi_obstacle <= u <= 1,

with the pairwise perimeter of :mod:`hullcap.field_core`.  By the discrete
coarea formula every superlevel set of a minimiser solves the set problem,
and the lowest one gives the maximal-volume solution, i.e. the hull.
The convex problem is solved with a diagonally preconditioned primal-dual
(Chambolle-Pock) iteration, optionally warm started from coarser grids.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from sklearn.base import BaseEstimator

from .field_core import (
    STENCIL_REACH,
    Grid,
    RegionMask,
    ScalarField,
    SolveReport,
    check_field,
    check_mask,
    measure,
    measure_theoretic_interior,
    pair_total_variation,
    pair_weight_arrays,
)

__all__ = [
    "ObstacleProblem",
    "HullResult",
    "OutwardTest",
    "DomainTooSmallError",
    "SolverFailure",
    "solve_tv_obstacle",
    "extract_hull",
    "is_outward_minimising",
    "HullSolver",
    "hull",
]


class DomainTooSmallError(RuntimeError):
    """The hull reaches the padding band, so the box clips it."""


class SolverFailure(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class ObstacleProblem:
    grid: Grid
    obstacle: RegionMask
    box_padding: int = 0
    max_iters: int = 20000
    gap_tol: float = 1e-4
    step_ratio: float = 10.0

    def __post_init__(self):
        check_mask(self.obstacle, self.grid)
        if self.gap_tol <= 0:
            raise ValueError("gap_tol must be positive")
        if self.box_padding < 0:
            raise ValueError("box_padding must be nonnegative")
        if self.step_ratio <= 0:
            raise ValueError("step_ratio must be positive")
        if not self.obstacle.indicator.any():
            raise ValueError("obstacle is empty")
        if self.obstacle.indicator[~self.interior_box()].any():
            raise DomainTooSmallError("obstacle touches the padding band")

    @property
    def band(self) -> int:
        return max(int(self.box_padding), STENCIL_REACH)

    def interior_box(self) -> np.ndarray:
        """Cells available to competitors (outside the padding band)."""
        b = self.band
        box = np.zeros(self.grid.dims, bool)
        box[tuple(slice(b, d - b) for d in self.grid.dims)] = True
        return box


@dataclass(frozen=True)
class HullResult:
    relaxed: ScalarField
    hull: RegionMask
    hull_perimeter: float
    hull_volume: float
    report: SolveReport
    objective: float = float("nan")


@dataclass(frozen=True)
class OutwardTest:
    verdict: bool
    gap: float
    perimeter: float
    hull_perimeter: float
    result: Optional[HullResult] = None

    def __iter__(self):
        yield self.verdict
        yield self.gap


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _cp_sweeps(u, ubar, lo, hi, dual, shifts, weights, tau, sigma, n_sweeps, grad):
    size = u.size
    for _ in range(n_sweeps):
        for i in range(size):
            grad[i] = 0.0
        for k in range(shifts.size):
            s = shifts[k]
            start = -s if s < 0 else 0
            stop = size - s if s > 0 else size
            for i in range(start, stop):
                w = weights[k, i]
                q = dual[k, i] + sigma * (ubar[i + s] - ubar[i])
                if q > w:
                    q = w
                elif q < -w:
                    q = -w
                dual[k, i] = q
                grad[i + s] += q
                grad[i] -= q
        for i in range(size):
            x = u[i] - tau * grad[i]
            if x < lo[i]:
                x = lo[i]
            elif x > hi[i]:
                x = hi[i]
            ubar[i] = 2.0 * x - u[i]
            u[i] = x


@numba.njit(cache=True)
def _tv_flat(u, shifts, weights):
    size = u.size
    total = 0.0
    for k in range(shifts.size):
        s = shifts[k]
        start = -s if s < 0 else 0
        stop = size - s if s > 0 else size
        acc = 0.0
        for i in range(start, stop):
            acc += weights[k, i] * abs(u[i + s] - u[i])
        total += acc
    return total


@numba.njit(cache=True)
def _adjoint(dual, shifts, grad):
    size = grad.size
    for i in range(size):
        grad[i] = 0.0
    for k in range(shifts.size):
        s = shifts[k]
        start = -s if s < 0 else 0
        stop = size - s if s > 0 else size
        for i in range(start, stop):
            grad[i + s] += dual[k, i]
            grad[i] -= dual[k, i]


def _flat_shifts(dims, offsets):
    strides = np.cumprod((1,) + tuple(dims[::-1]))[:-1][::-1]
    return np.array([int(np.dot(o, strides)) for o in offsets], dtype=np.int64)


def _coarsen(problem: ObstacleProblem) -> Optional[ObstacleProblem]:
    g = problem.grid
    if any(d % 2 for d in g.dims) or min(g.dims) < 128:
        return None
    shape = []
    for d in g.dims:
        shape += [d // 2, 2]
    axes = tuple(range(1, 2 * g.n, 2))
    obst = problem.obstacle.indicator.reshape(shape).any(axis=axes)
    phi = None
    if g.conformal_factor is not None:
        phi = g.conformal_factor.reshape(shape).mean(axis=axes)
    cg = Grid(tuple(d // 2 for d in g.dims), 2 * g.h, g.origin, phi)
    try:
        return ObstacleProblem(cg, RegionMask(cg, obst), (problem.band + 1) // 2,
                               problem.max_iters, max(problem.gap_tol, 1e-3),
                               problem.step_ratio)
    except DomainTooSmallError:
        return None


def _prolong(u: np.ndarray, n: int) -> np.ndarray:
    for ax in range(n):
        u = np.repeat(u, 2, axis=ax)
    return u


def solve_tv_obstacle(problem: ObstacleProblem, warm_start=None, multilevel: bool = True,
                      check_every: int = 50):
    """Minimise the relaxed perimeter over fields trapped between obstacle and 1.

    Returns
    -------
    dict with ``relaxed`` (ScalarField), ``report`` (SolveReport) and
    ``objective`` (final relaxed perimeter).  When the iteration budget runs
    out the report has ``converged=False`` and the last iterate is returned.
    """
    g = problem.grid
    notes = []
    if warm_start is None and multilevel:
        coarse = _coarsen(problem)
        if coarse is not None:
            sub = solve_tv_obstacle(coarse, multilevel=True, check_every=check_every)
            warm_start = _prolong(sub["relaxed"].values, g.n)
            notes.append(f"warm start from {coarse.grid.dims} "
                         f"after {sub['report'].iterations} iterations")
    offsets, wlist = pair_weight_arrays(g)
    shifts = _flat_shifts(g.dims, offsets)
    # the objective scale does not change the minimiser; keep steps h-independent
    weights = np.stack([w.ravel() for w in wlist]) / g.h ** (g.n - 1)
    box = problem.interior_box()
    lo = problem.obstacle.indicator.astype(float).ravel()
    hi = box.astype(float).ravel()
    if warm_start is None:
        u = lo.copy()
    else:
        u = np.clip(np.asarray(warm_start, dtype=float).ravel(), lo, hi)
    ubar = u.copy()
    dual = np.zeros((len(shifts), u.size))
    grad = np.empty_like(u)
    tau = problem.step_ratio / (2.0 * len(shifts))
    sigma = 1.0 / (2.0 * problem.step_ratio)
    report = SolveReport(notes=notes)
    it = 0
    gap = np.inf
    while it < problem.max_iters:
        n = min(check_every, problem.max_iters - it)
        _cp_sweeps(u, ubar, lo, hi, dual, shifts, weights, tau, sigma, n, grad)
        it += n
        _adjoint(dual, shifts, grad)
        primal = _tv_flat(u, shifts, weights)
        # dual objective: min over lo <= v <= hi of <K^T p, v>
        dual_obj = float(np.where(grad >= 0, grad * lo, grad * hi).sum())
        gap = (primal - dual_obj) / max(primal, 1e-300)
        report.residuals.append(gap)
        if gap <= problem.gap_tol:
            break
    report.iterations = it
    report.gap = float(gap)
    report.converged = bool(gap <= problem.gap_tol)
    report.message = "converged" if report.converged else "iteration budget exhausted"
    u = np.clip(u, lo, hi).reshape(g.dims)
    relaxed = ScalarField(g, u)
    return {"relaxed": relaxed, "report": report,
            "objective": pair_total_variation(u, g)}


def extract_hull(relaxed: ScalarField, obstacle: RegionMask, threshold: float = 1e-6,
                 window: int = 1, perimeter_rtol: float = 1e-3, band: int = STENCIL_REACH,
                 report: Optional[SolveReport] = None) -> HullResult:
    """Maximal-volume minimising superlevel set of a relaxed solution.

    Thresholds from ``threshold`` (relative to the value range) up to 1/2 are
    scanned; the lowest one whose set perimeter is within ``perimeter_rtol``
    of the best scanned perimeter wins.  The set is cleaned with
    :func:`measure_theoretic_interior` and always contains the obstacle.
    """
    check_field(relaxed, lo=0.0, hi=1.0, name="relaxed solution")
    check_mask(obstacle, relaxed.grid)
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    u = relaxed.values
    span = float(u.max() - u.min()) or 1.0
    report = report if report is not None else SolveReport()
    levels = np.unique(np.r_[np.geomspace(threshold, 0.5, 14), 0.5]) * span
    cands = []
    for s in levels:
        sup = RegionMask(relaxed.grid, (u > s) | obstacle.indicator)
        m = measure_theoretic_interior(sup, window) | obstacle
        cands.append((s, m, measure(m)["perimeter"]))
    best = min(c[2] for c in cands)
    s, hull_mask, per = next(c for c in cands if c[2] <= best * (1 + perimeter_rtol))
    if not (u > levels[0]).any() or not (hull_mask.indicator & ~obstacle.indicator).any():
        report.notes.append("relaxed solution vanishes off the obstacle: hull equals obstacle")
    report.notes.append(f"hull threshold {s:.3g}")
    b = band + 1
    ring = np.ones(relaxed.grid.dims, bool)
    ring[tuple(slice(b, d - b) for d in relaxed.grid.dims)] = False
    if (hull_mask.indicator & ring).any():
        raise DomainTooSmallError("hull reaches the padding band; enlarge the box")
    vol = measure(hull_mask)["volume"]
    return HullResult(relaxed, hull_mask, float(per), float(vol), report,
                      pair_total_variation(u, relaxed.grid))


def hull(obstacle: RegionMask, **params) -> HullResult:
    """Convenience wrapper: solve and extract in one call."""
    return HullSolver(**params).fit(obstacle).result_


class HullSolver(BaseEstimator):
    """Estimator front end for the obstacle problem.

    Parameters
    ----------
    max_iters, gap_tol, step_ratio, box_padding : solver controls
    threshold : lowest superlevel considered by the extraction
    window : half-width of the density filter
    multilevel : warm start from coarser grids when the dims allow it
    raise_on_failure : raise ``SolverFailure`` if the gap target is missed

    Attributes
    ----------
    relaxed_, hull_, hull_perimeter_, hull_volume_, report_, result_
    """

    def __init__(self, max_iters=20000, gap_tol=1e-4, step_ratio=10.0, box_padding=0,
                 threshold=1e-6, window=1, multilevel=True, raise_on_failure=False):
        self.max_iters = max_iters
        self.gap_tol = gap_tol
        self.step_ratio = step_ratio
        self.box_padding = box_padding
        self.threshold = threshold
        self.window = window
        self.multilevel = multilevel
        self.raise_on_failure = raise_on_failure

    def fit(self, X: RegionMask, y=None):
        check_mask(X)
        prob = ObstacleProblem(X.grid, X, self.box_padding, self.max_iters, self.gap_tol,
                               self.step_ratio)
        sol = solve_tv_obstacle(prob, multilevel=self.multilevel)
        if self.raise_on_failure and not sol["report"].converged:
            raise SolverFailure(f"gap {sol['report'].gap:.3g} above {self.gap_tol}",
                                sol["report"])
        res = extract_hull(sol["relaxed"], X, self.threshold, self.window,
                           band=prob.band, report=sol["report"])
        self.result_ = res
        self.relaxed_ = res.relaxed
        self.hull_ = res.hull
        self.hull_perimeter_ = res.hull_perimeter
        self.hull_volume_ = res.hull_volume
        self.report_ = res.report
        return self

    def transform(self, X: RegionMask) -> RegionMask:
        return self.fit(X).hull_


def is_outward_minimising(mask: RegionMask, tol: float = 1e-2, solver: Optional[HullSolver] = None
                          ) -> OutwardTest:
    """Compare the perimeter of a set with that of its hull.

    gap = (P(mask) - P(hull)) / P(mask); the verdict is ``gap <= tol``.
    """
    check_mask(mask)
    if tol <= 0:
        raise ValueError("tol must be positive")
    solver = solver if solver is not None else HullSolver()
    solver.fit(mask)
    res = solver.result_
    p = measure(mask)["perimeter"]
    gap = (p - res.hull_perimeter) / p
    return OutwardTest(bool(gap <= tol), float(gap), float(p), res.hull_perimeter, res)
