"""p -> 1 capacity studies and the analytic bounds that bracket them.

A limit study solves the capacitary problem of one obstacle for a decreasing
schedule of exponents, computes the hull of the same obstacle, and checks
that the capacities approach the hull perimeter from above in the way the
Sobolev-type bound dictates.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .field_core import Grid, RegionMask, StudyTable, check_mask, unit_ball_volume
from .hull_solver import HullSolver
from .p_laplace import PLaplaceConfig, solve_potential
from .warped_radial import (
    WarpedProfile,
    radial_hull,
    radial_p_capacity,
    sphere_area,
)

__all__ = [
    "DEFAULT_P_SCHEDULE",
    "SobolevData",
    "sharp_sobolev_constant",
    "capacity_ratio_factor",
    "LimitStudy",
    "LimitStudyError",
    "run_limit_study",
    "run_radial_limit_study",
    "ParabolicityIntegral",
    "parabolicity_integral",
    "DecayBound",
    "decay_bound",
    "fit_decay_envelope",
]

DEFAULT_P_SCHEDULE = tuple(1 + 2.0 ** -k for k in range(1, 7))
PARABOLIC_FLAG = "p-parabolic: capacities vanish while the hull has positive perimeter"


# ---------------------------------------------------------------- Sobolev data


def sharp_sobolev_constant(n: int) -> float:
    """Sharp flat L1-Sobolev constant 1 / (n |B^n|^(1/n))."""
    if n < 2:
        raise ValueError("dimension must be at least 2")
    return 1.0 / (n * unit_ball_volume(n) ** (1.0 / n))


@dataclass(frozen=True)
class SobolevData:
    """Constants derived from an L1-Sobolev constant in dimension ``n``."""

    n: int
    C_sob: float

    def __post_init__(self):
        if self.n < 2 or not self.C_sob > 0:
            raise ValueError("need n >= 2 and C_sob > 0")

    @classmethod
    def flat(cls, n: int) -> "SobolevData":
        return cls(n, sharp_sobolev_constant(n))

    def _check(self, p: float):
        if not 1 < p < self.n:
            raise ValueError(f"exponent must lie in (1, {self.n}), got {p}")

    def p_star(self, p: float) -> float:
        self._check(p)
        return self.n * p / (self.n - p)

    def C_np(self, p: float) -> float:
        self._check(p)
        return self.C_sob * (self.n - 1) * p / (self.n - p)

    def q_p(self, p: float) -> float:
        return 1 + self.p_star(p) * (p - 1) / p

    def derived(self, p: float) -> dict:
        return {"C_np": self.C_np(p), "p_star": self.p_star(p), "q_p": self.q_p(p)}


def capacity_ratio_factor(n: int, p: float, C_sob: Optional[float] = None) -> float:
    """q_p * C_{n,p}^((p-1)/p); bounds Cap_1 / Cap_p.  ``C_sob`` defaults to the flat value."""
    data = SobolevData.flat(n) if C_sob is None else SobolevData(n, C_sob)
    return data.q_p(p) * data.C_np(p) ** ((p - 1) / p)


# ---------------------------------------------------------------- limit studies


@dataclass
class LimitStudy:
    p_schedule: tuple
    capacities: StudyTable
    hull_perimeter: float
    cap1_estimate: float
    chain_ok: bool
    limit_gap: float
    flags: list = field(default_factory=list)
    complete: bool = True
    hull: object = None

    def as_dict(self) -> dict:
        return {
            "p_schedule": list(self.p_schedule),
            "hull_perimeter": self.hull_perimeter,
            "cap1_estimate": self.cap1_estimate,
            "chain_ok": self.chain_ok,
            "limit_gap": self.limit_gap,
            "flags": list(self.flags),
            "complete": self.complete,
        }


class LimitStudyError(RuntimeError):
    """A capacity solve failed; ``study`` holds the rows computed before it."""

    def __init__(self, msg, study: LimitStudy):
        super().__init__(msg)
        self.study = study


def _check_schedule(p_schedule, upper):
    ps = tuple(float(p) for p in p_schedule)
    if not ps:
        raise ValueError("p_schedule is empty")
    if any(b >= a for a, b in zip(ps, ps[1:])):
        raise ValueError("p_schedule must be strictly decreasing")
    if ps[-1] <= 1 or ps[0] >= upper:
        raise ValueError(f"p_schedule must lie in (1, {upper})")
    return ps


def _verdict(table: StudyTable, hull_perimeter: float, cap1: float, tol: float,
             factors: Sequence[float]):
    """Evaluate P(hull) <= Cap_1 <= factor_p * Cap_p row by row.

    Rows without a Sobolev factor are skipped; the last capacity must in any
    case not undershoot Cap_1, which is the liminf end of the chain.
    """
    caps = table.column("capacity")
    ok_hull = hull_perimeter <= cap1 * (1 + tol)
    ok_rows = [cap1 <= f * c * (1 + tol) for f, c in zip(factors, caps) if math.isfinite(f)]
    ok_last = caps[-1] >= cap1 * (1 - tol)
    gap = abs(caps[-1] - hull_perimeter) / hull_perimeter if hull_perimeter > 0 else math.nan
    return bool(ok_hull and ok_last and all(ok_rows)), float(gap), ok_rows


def run_limit_study(grid: Grid, obstacle: RegionMask, p_schedule=DEFAULT_P_SCHEDULE, *,
                    radii=(1.0,), centre=None, hull_solver: Optional[HullSolver] = None,
                    pcap_options: Optional[dict] = None,
                    oracle: Optional[Callable[[float], float]] = None,
                    tol: float = 0.02, n_jobs: int = 1) -> LimitStudy:
    """Capacities of ``obstacle`` along ``p_schedule`` next to its hull perimeter.

    ``radii`` is the truncation schedule handed to every capacity solve, and
    ``oracle(p)``, when given, fills a reference column.  ``tol`` is the
    combined relative tolerance of the chain check.  Solves for different p
    are independent; with ``n_jobs > 1`` they run in threads and the table
    is assembled in schedule order.
    """
    check_mask(obstacle, grid)
    ps = _check_schedule(p_schedule, math.inf)
    solver = hull_solver if hull_solver is not None else HullSolver()
    hres = solver.fit(obstacle).result_
    hull_perimeter = float(hres.hull_perimeter)
    cap1 = float(hres.objective)
    opts = dict(pcap_options or {})

    def solve(p):
        cfg = PLaplaceConfig(p, tuple(radii), **opts)
        return solve_potential(grid, obstacle, cfg, centre=centre)

    cols = ("p", "capacity", "oracle", "oracle_gap", "capacity_ratio_factor", "converged")
    table = StudyTable(cols, metadata={"n": grid.n, "radii": list(radii), "tol": tol})
    factors = []
    failure = None
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(solve, p) for p in ps]
        outcomes = []
        for fut in futures:
            try:
                outcomes.append(fut.result())
            except Exception as exc:  # keep the rows before the first failure
                failure = exc
                break
    else:
        outcomes = []
        for p in ps:
            try:
                outcomes.append(solve(p))
            except Exception as exc:
                failure = exc
                break
    for p, res in zip(ps, outcomes):
        ref = float(oracle(p)) if oracle is not None else math.nan
        gap = res.capacity / ref - 1 if oracle is not None and ref > 0 else math.nan
        fac = capacity_ratio_factor(grid.n, p) if grid.is_flat and p < grid.n else math.nan
        factors.append(fac)
        table.add(p, res.capacity, ref, gap, fac, res.report.converged)

    flags = []
    if len(table):
        chain_ok, gap, _ = _verdict(table, hull_perimeter, cap1, tol, factors)
        if not grid.is_flat:
            flags.append("curved grid: no Sobolev factor, only the liminf end of the chain is checked")
        caps = table.column("capacity")
        if hull_perimeter > 0 and caps[-1] < 1e-6 * hull_perimeter:
            chain_ok = False
            flags.append(PARABOLIC_FLAG)
    else:
        chain_ok, gap = False, math.nan
    study = LimitStudy(ps, table, hull_perimeter, cap1, chain_ok, gap, flags,
                       complete=failure is None, hull=hres)
    if failure is not None:
        study.flags.append(f"aborted at p={ps[len(table)]}: {failure}")
        raise LimitStudyError(f"capacity solve failed at p={ps[len(table)]}: {failure}", study) from failure
    return study


def run_radial_limit_study(profile: WarpedProfile, rho0: float, p_schedule=DEFAULT_P_SCHEDULE, *,
                           tol: float = 1e-6) -> LimitStudy:
    """Limit study for the ball {rho <= rho0} of a warped product, by the 1D engine.

    The hull perimeter is the area of the hull sphere when the least-area
    problem has a unique solution; the 1-capacity is taken equal to it.
    """
    ps = _check_schedule(p_schedule, math.inf)
    verdict = radial_hull(profile, rho0)
    flags = []
    if verdict.kind == "hull_exists_unique":
        hull_perimeter = sphere_area(profile, verdict.witness["hull_radius"])
    else:
        hull_perimeter = math.nan
        flags.append(f"least-area problem: {verdict.kind}")
    flat_like = profile.name == "flat"
    cols = ("p", "capacity", "parabolic", "capacity_ratio_factor")
    table = StudyTable(cols, metadata={"profile": profile.name, "rho0": rho0})
    factors = []
    for p in ps:
        cap = radial_p_capacity(profile, rho0, p)
        fac = capacity_ratio_factor(profile.n, p) if flat_like and p < profile.n else math.nan
        factors.append(fac)
        table.add(p, cap.capacity, cap.parabolic, fac)
    caps = table.column("capacity")
    if math.isfinite(hull_perimeter):
        chain_ok, gap, _ = _verdict(table, hull_perimeter, hull_perimeter, tol, factors)
    else:
        chain_ok, gap = False, math.nan
    if hull_perimeter > 0 and caps[-1] < 1e-6 * hull_perimeter:
        chain_ok = False
        flags.append(PARABOLIC_FLAG)
    return LimitStudy(ps, table, hull_perimeter, hull_perimeter, chain_ok, gap, flags)


# ---------------------------------------------------------------- volume-growth bounds


@dataclass(frozen=True)
class ParabolicityIntegral:
    value: float
    diverges: bool
    tail_slope: float


def parabolicity_integral(volume_growth: Callable[[float], float], p: float, r0: float = 1.0,
                        r_max: float = 1e6, slope_tol: float = 1e-3) -> ParabolicityIntegral:
    """Truncated int_r0^r_max (t / |B(t)|)^(1/(p-1)) dt and a divergence verdict.

    The verdict reads the log-log slope of the integrand over the last decade:
    a slope of -1 or flatter means the tail does not decay fast enough.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    if not 0 < r0 < r_max:
        raise ValueError("need 0 < r0 < r_max")
    k = 1.0 / (p - 1)

    def log_integrand(t):
        vol = float(volume_growth(t))
        if not vol > 0:
            raise ValueError("volume_growth must be positive")
        return k * (math.log(t) - math.log(vol))

    # substitute t = e^s so each decade gets equal weight
    def g(s):
        t = math.exp(s)
        return math.exp(log_integrand(t) + s)

    a, b = math.log(r0), math.log(r_max)
    points = np.linspace(a, b, max(2, int(b - a) + 1))
    value = sum(integrate.quad(g, lo, hi, limit=200, epsrel=1e-10)[0]
                for lo, hi in zip(points[:-1], points[1:]))
    t1, t2 = r_max / 10, r_max
    slope = (log_integrand(t2) - log_integrand(t1)) / (math.log(t2) - math.log(t1))
    return ParabolicityIntegral(float(value), bool(slope >= -1 - slope_tol), float(slope))


@dataclass(frozen=True)
class DecayBound:
    value: float
    exponent: float
    near_critical: bool


def decay_bound(p: float, b: float, C_vol: float, r, near_critical: float = 1e-2) -> DecayBound:
    """Envelope C^(1/(p-1)) / ((b-p)(p-1)) * r^(-(b-p)/(p-1)) for potentials.

    ``b`` is the volume-growth exponent and ``C_vol`` its constant.  The
    prefactor blows up as p approaches b; within ``near_critical`` of it the
    value is still returned, with a warning.
    """
    if not 1 < p < b:
        raise ValueError("need 1 < p < b")
    if C_vol <= 0:
        raise ValueError("C_vol must be positive")
    expo = (b - p) / (p - 1)
    pref = C_vol ** (1 / (p - 1)) / ((b - p) * (p - 1))
    close = (b - p) < near_critical
    if close:
        warnings.warn(f"near-critical exponent: b - p = {b - p:g}", RuntimeWarning, stacklevel=2)
    val = pref * np.asarray(r, dtype=float) ** (-expo)
    val = float(val) if np.ndim(val) == 0 else val
    return DecayBound(val, expo, close)


def fit_decay_envelope(r, u, p: float, b: float) -> dict:
    """Compare a sampled radial potential with the decay shape r^(-(b-p)/(p-1)).

    Returns the fitted log-log slope, the exponent of the envelope, and the
    smallest constant for which the envelope dominates every sample.
    """
    r = np.asarray(r, float)
    u = np.asarray(u, float)
    keep = (r > 0) & (u > 0)
    if keep.sum() < 2:
        raise ValueError("need at least two positive samples")
    r, u = r[keep], u[keep]
    expo = (b - p) / (p - 1)
    slope = float(np.polyfit(np.log(r), np.log(u), 1)[0])
    const = float(np.max(u * r ** expo))
    return {"slope": slope, "exponent": expo, "constant": const,
            "shape_ok": bool(slope <= -expo + 1e-6 * max(1.0, expo))}
