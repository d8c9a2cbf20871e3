"""Acceptance suite run by ``hullcap verify``.

Each criterion is a function of a shared context dict returning a list of
:class:`Check` records.  Criteria that reuse heavy results (the 512² star
hull, the limit studies) read them from the context when an earlier
criterion already computed them.  Runtimes are kept apart from the checks
so that a deterministic run can leave them out of its manifest.
"""
from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import binary_dilation

from . import shapes
from .cap_limit import capacity_ratio_factor, run_limit_study
from .field_core import Grid, RegionMask, ScalarField, measure
from .hull_solver import HullSolver, is_outward_minimising
from .isoperimetry import (
    avr_sharp_constant,
    dini_comparison,
    isoperimetric_profile,
    radial_iso_ratio,
)
from .p_laplace import PLaplaceConfig, imcf_functional, level_set_residual, solve_potential
from .symmetrization import (
    ball_dirichlet_eigenvalue,
    faber_krahn_check,
    first_eigenvalue,
    polya_szego_campaign,
)
from .warped_radial import (
    avr,
    cigar,
    cone,
    cusp,
    cylinder,
    flat,
    flat_ball_capacity,
    radial_hull,
    radial_imcf,
    radial_p_capacity,
    radial_relative_capacity,
    willmore_radial,
)

__all__ = ["Check", "CriterionResult", "CRITERIA", "run_criteria", "DETERMINISM_ID"]

DETERMINISM_ID = 14


@dataclass
class Check:
    name: str
    value: object
    bound: object
    passed: bool
    note: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "value": _plain(self.value), "bound": _plain(self.bound),
                "passed": bool(self.passed), "note": self.note}


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


@dataclass
class CriterionResult:
    id: int
    title: str
    checks: list = field(default_factory=list)
    runtime: float = 0.0
    runtime_limit: Optional[float] = None
    error: str = ""

    @property
    def runtime_ok(self) -> bool:
        return self.runtime_limit is None or self.runtime < self.runtime_limit

    @property
    def passed(self) -> bool:
        return not self.error and self.runtime_ok and all(c.passed for c in self.checks)

    def as_dict(self, include_runtime: bool = True) -> dict:
        out = {"id": self.id, "title": self.title, "passed": self.passed,
               "checks": [c.as_dict() for c in self.checks],
               "runtime_limit_s": self.runtime_limit, "error": self.error}
        if include_runtime:
            out["runtime_s"] = self.runtime
            out["runtime_ok"] = self.runtime_ok
        return out

    def summary_line(self) -> str:
        failing = [c.name for c in self.checks if not c.passed]
        if not self.runtime_ok:
            failing.append(f"runtime {self.runtime:.1f}s >= {self.runtime_limit:g}s")
        if self.error:
            failing.append("error: " + self.error.splitlines()[-1])
        tail = "" if not failing else " | failing: " + "; ".join(failing)
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.id:2d}: {self.title}{tail}"


def _rel(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------- hull criteria


def _star512(ctx):
    if "star512" not in ctx:
        grid = Grid.box(-1.0, 1.0, 512)
        star = shapes.star()
        mask = star.mask(grid)
        solver = HullSolver().fit(mask)
        ctx["star512"] = (grid, star, mask, solver)
    return ctx["star512"]


def crit_hull_oracle(ctx):
    _, star, _, solver = _star512(ctx)
    rel = _rel(solver.hull_perimeter_, star.hull_perimeter)
    return [Check("star hull perimeter vs convex-hull perimeter (relative)", rel, 0.02, rel <= 0.02),
            Check("hull solve converged", solver.report_.converged, True, solver.report_.converged)]


def crit_outward(ctx):
    grid, star, mask, solver = _star512(ctx)
    checks = []
    for name, shape in (("disk", shapes.disk(0.5)), ("blob", shapes.blob())):
        test = is_outward_minimising(shape.mask(grid), tol=0.01)
        checks.append(Check(f"{name} outward gap", test.gap, 0.01, test.gap <= 0.01))
    p = measure(mask)["perimeter"]
    gap = (p - solver.hull_perimeter_) / p
    oracle = (star.perimeter - star.hull_perimeter) / star.perimeter
    checks.append(Check("star gap minus polygon oracle gap (absolute)", abs(gap - oracle), 0.02,
                        abs(gap - oracle) <= 0.02, f"gap={gap:.6f} oracle={oracle:.6f}"))
    return checks


def _random_instance(rng, grid):
    kind = ("star", "dumbbell", "cross", "blob", "square", "disk")[int(rng.integers(6))]
    centre = tuple(rng.uniform(-0.1, 0.1, 2))
    if kind == "star":
        shape = shapes.star(int(rng.integers(3, 8)), rng.uniform(0.2, 0.5), rng.uniform(0.4, 0.65),
                            centre)
    elif kind == "dumbbell":
        shape = shapes.dumbbell(rng.uniform(0.2, 0.5), rng.uniform(0.06, 0.15),
                                rng.uniform(0.25, 0.35), centre)
    elif kind == "cross":
        shape = shapes.cross(rng.uniform(0.4, 0.6), rng.uniform(0.15, 0.3), centre)
    elif kind == "blob":
        shape = shapes.blob(((int(rng.integers(2, 6)), rng.uniform(0.05, 0.25)),),
                            rng.uniform(0.4, 0.6), centre)
    elif kind == "square":
        shape = shapes.square(rng.uniform(0.5, 1.0), centre)
    else:
        shape = shapes.disk(rng.uniform(0.2, 0.6), centre)
    return shape.name, shape.mask(grid)


def _within_layer(a: np.ndarray, b: np.ndarray) -> bool:
    """a is contained in b grown by one cell layer."""
    return bool(np.all(~a | binary_dilation(b, iterations=1)))


def crit_idempotence(ctx, instances: int = 20, seed: int = 20240611):
    grid = Grid.box(-1.0, 1.0, 128)
    rng = np.random.default_rng(seed)
    solver = HullSolver()
    bad_idem, bad_mono = [], []
    for k in range(instances):
        name, A = _random_instance(rng, grid)
        H = solver.fit(A).hull_.indicator
        H2 = solver.fit(RegionMask(grid, H)).hull_.indicator
        if not (_within_layer(H, H2) and _within_layer(H2, H)):
            bad_idem.append(f"{k}:{name}")
        # a larger obstacle: add a disk somewhere in the box
        extra = shapes.disk(rng.uniform(0.08, 0.15), tuple(rng.uniform(-0.7, 0.7, 2))).mask(grid)
        B = A | extra
        HB = solver.fit(B).hull_.indicator
        if not _within_layer(H, HB):
            bad_mono.append(f"{k}:{name}")
    return [Check("idempotence failures", len(bad_idem), 0, not bad_idem, ",".join(bad_idem)),
            Check("monotonicity failures", len(bad_mono), 0, not bad_mono, ",".join(bad_mono))]


# ---------------------------------------------------------------- capacity criteria


def crit_radial_capacity(ctx):
    checks = []
    ps = (1.2, 1.5, 2.0)
    for n in (2, 3):
        for p in ps:
            full = radial_p_capacity(flat(n), 1.0, p)
            ref = flat_ball_capacity(n, p, 1.0)
            if ref == 0.0:
                ok = full.parabolic and full.capacity == 0.0
                checks.append(Check(f"1D full-space n={n} p={p}", full.capacity, 0.0, ok,
                                    "parabolic case"))
            else:
                e = _rel(full.capacity, ref)
                checks.append(Check(f"1D full-space n={n} p={p}", e, 0.005, e <= 0.005))
            rel = radial_relative_capacity(flat(n), 1.0, p, 2.0)
            e = _rel(rel, flat_ball_capacity(n, p, 1.0, 2.0))
            checks.append(Check(f"1D relative R=2 n={n} p={p}", e, 0.005, e <= 0.005))
    h = 1.0 / 256
    # 2D: disk of 64 cells radius inside a ball of 128 cells radius
    g2 = Grid.box(-132 * h, 132 * h, 264)
    m2 = shapes.disk(64 * h).mask(g2)
    # 3D: ball of 24 cells radius inside a ball of 48 cells radius
    g3 = Grid.box(-50 * h, 50 * h, 100, n=3)
    m3 = shapes.ball(24 * h).mask(g3)
    for n, g, m, r0, R in ((2, g2, m2, 64 * h, 128 * h), (3, g3, m3, 24 * h, 48 * h)):
        for p in ps:
            res = solve_potential(g, m, PLaplaceConfig(p, (R,)), centre=(0.0,) * n)
            e = _rel(res.capacity, flat_ball_capacity(n, p, r0, R))
            checks.append(Check(f"grid h=1/256 n={n} p={p}", e, 0.015, e <= 0.015,
                                f"capacity={res.capacity:.6f}"))
    return checks


def _limit_grid():
    return Grid.box(-1.05, 1.05, 256)


def crit_limit(ctx):
    g = _limit_grid()
    ps = (1.4, 1.2, 1.1, 1.05)
    disk = run_limit_study(g, shapes.disk(0.5).mask(g), ps, radii=(1.0,), centre=(0.0, 0.0),
                           oracle=lambda p: flat_ball_capacity(2, p, 0.5, 1.0))
    checks = []
    for row in disk.capacities.rows:
        p, gap = row[0], row[3]
        checks.append(Check(f"disk Cap_p vs radial oracle p={p}", abs(gap), 0.01, abs(gap) <= 0.01))
    cap = disk.capacities.column("capacity")[-1]
    e = _rel(cap, math.pi)
    checks.append(Check("disk |Cap_1.05 - pi| / pi", e, 0.03, e <= 0.03))
    star_shape = shapes.star()
    star = run_limit_study(g, star_shape.mask(g), (1.05,), radii=(1.0,), centre=(0.0, 0.0))
    cap = star.capacities.column("capacity")[-1]
    e = _rel(cap, star.hull_perimeter)
    checks.append(Check("star |Cap_1.05 - P(hull)| / P(hull)", e, 0.05, e <= 0.05,
                        f"Cap={cap:.6f} P(hull)={star.hull_perimeter:.6f} "
                        f"convex-hull oracle={star_shape.hull_perimeter:.6f}"))
    ctx["limit_studies"] = {"disk": disk, "star": star}
    return checks


def crit_chain(ctx):
    if "limit_studies" not in ctx:
        crit_limit(ctx)
    checks = []
    for name, study in ctx["limit_studies"].items():
        checks.append(Check(f"{name} chain P(hull) <= Cap_1 <= factor * Cap_p", study.chain_ok, True,
                            study.chain_ok, "; ".join(study.flags)))
        facs = study.capacities.column("capacity_ratio_factor")
        caps = study.capacities.column("capacity")
        ratio = float(np.max(study.cap1_estimate / caps / facs))
        tol = study.capacities.metadata["tol"]
        checks.append(Check(f"{name} max Cap_1 / (factor * Cap_p)", ratio, 1 + tol, ratio <= 1 + tol))
    for n in (2, 3):
        d = capacity_ratio_factor(n, 1 + 2.0 ** -10) - 1
        checks.append(Check(f"|capacity_ratio_factor(n={n}, p=1+2^-10) - 1|", abs(d), 1e-3,
                            abs(d) <= 1e-3))
    return checks


# ---------------------------------------------------------------- radial criteria


def crit_trichotomy(ctx):
    checks = []
    for name, prof, want in (("cusp", cusp(3), "no_solution"),
                             ("cylinder", cylinder(3), "non_unique_unbounded_volume"),
                             ("cigar", cigar(2), "hull_exists_unique")):
        kind = radial_hull(prof, 1.0).kind
        checks.append(Check(f"{name} verdict", kind, want, kind == want))
    for p in (1.2, 1.5, 2.0):
        cap = radial_p_capacity(cigar(2), 1.0, p)
        checks.append(Check(f"cigar Cap_{p}", cap.capacity, 0.0,
                            cap.parabolic and cap.capacity == 0.0))
    return checks


def _cigar_residual(cells: int, extent: float = 6.5, band=(1.3, 2.5)):
    flow = radial_imcf(cigar(2), 1.0)
    g0 = Grid.box(-extent, extent, cells)
    r = g0.radius((0.0, 0.0))
    g = g0.with_conformal_factor(1.0 / np.sqrt(1 + r * r))
    rho = np.arcsinh(r)
    # the flow starts at rho = 1; inside, any smooth continuation will do
    w = flow(np.maximum(rho, 0.5))
    res = level_set_residual(ScalarField(g, w))
    sel = (rho >= band[0]) & (rho <= band[1]) & res.valid.indicator
    return float(np.max(np.abs(res.values[sel]))), g.h


def crit_cigar_imcf(ctx):
    flow = radial_imcf(cigar(2), 1.0)
    rho = np.linspace(1.0, 10.0, 2001)
    exact = np.log(np.tanh(rho) / np.tanh(1.0))
    err = float(np.max(np.abs(flow(rho) - exact)))
    checks = [Check("radial_imcf vs closed form (max abs)", err, 1e-8, err <= 1e-8)]
    errs = [_cigar_residual(c) for c in (128, 256, 512)]
    orders = [math.log2(errs[i][0] / errs[i + 1][0]) for i in range(2)]
    decreasing = errs[0][0] > errs[1][0] > errs[2][0]
    checks.append(Check("lifted residual decreases under refinement",
                        [e for e, _ in errs], "decreasing", decreasing))
    checks.append(Check("observed residual order", min(orders), 0.9, min(orders) >= 0.9,
                        f"orders={orders}"))
    checks.append(Check("proper-but-bounded flag", flow.proper_but_bounded, True,
                        flow.proper_but_bounded))
    return checks


def crit_cone(ctx):
    c = cone(0.5, 3)
    a = avr(c)
    sharp = avr_sharp_constant(c)
    checks = [Check("AVR of cone a=0.5 n=3", a, 0.25, abs(a - 0.25) <= 1e-12)]
    for rho in (0.5, 1.0, 2.0, 5.0):
        w = willmore_radial(c, rho)
        e = _rel(w, a * 4 * math.pi)
        checks.append(Check(f"Willmore of sphere rho={rho} vs AVR|S^2|", e, 1e-8, e <= 1e-8))
        e = _rel(radial_iso_ratio(c, rho), sharp)
        checks.append(Check(f"iso_ratio of ball rho={rho} vs sharp constant", e, 1e-8, e <= 1e-8))
    return checks


# ---------------------------------------------------------------- isoperimetry


def crit_dini(ctx, cells: int = 256, margin: int = 4):
    h = 1.0 / cells
    g = Grid((cells + 2 * margin,) * 2, h, origin=(-margin * h, -margin * h))
    X, Y = g.coordinates()
    U = RegionMask(g, (X > 0) & (X < 1) & (Y > 0) & (Y < 1))
    vols = (0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.85)
    prof = isoperimetric_profile(U, vols)
    dini = dini_comparison(prof)
    worst = float(np.min(dini.increments))
    checks = [Check("min Dini increment vs -1e-3*scale", worst, -dini.tolerance, dini.monotone_ok)]
    for v, area in zip(prof.volumes, prof.areas):
        if v <= 0.2:
            e = _rel(area, 2 * math.sqrt(math.pi * v))
            checks.append(Check(f"area at v={v} vs 2 sqrt(pi v)", e, 0.02, e <= 0.02))
    return checks


# ---------------------------------------------------------------- symmetrization


def crit_polya_szego(ctx):
    table = polya_szego_campaign(100, 512, seed=0, t_count=2048)
    holds = int(np.sum(table.column("holds")))
    defect = float(np.max(table.column("l2_defect")))
    return [Check("trials where the inequality holds", holds, 100, holds == 100),
            Check("max L2 defect", defect, 1e-4, defect <= 1e-4)]


def crit_faber_krahn(ctx):
    n = 256
    gs = Grid((n, n), 1.0 / n, origin=(0.0, 0.0))
    square = RegionMask(gs, np.ones(gs.dims, dtype=bool))
    lam_sq = first_eigenvalue(square).lambda1
    gd = Grid.box(-1.0, 1.0, 512)
    lam_disk = first_eigenvalue(shapes.disk(1.0).mask(gd)).lambda1
    j2 = ball_dirichlet_eigenvalue(2, 1.0)
    fk = faber_krahn_check(square, lambda1=lam_sq)
    fk_half = faber_krahn_check(square, avr=0.5, lambda1=lam_sq)
    e_sq = _rel(lam_sq, 19.739)
    e_disk = _rel(lam_disk, 5.7832)
    scale = fk_half.bound / fk.bound
    return [Check("unit square lambda_1 vs 19.739", e_sq, 0.01, e_sq <= 0.01, f"{lam_sq:.6f}"),
            Check("unit disk lambda_1 vs 5.7832", e_disk, 0.01, e_disk <= 0.01, f"{lam_disk:.6f}"),
            Check("square lambda_1 >= equal-area disk bound", fk.bound, 18.17,
                  fk.holds and abs(fk.bound - math.pi * j2) <= 1e-9 and abs(fk.bound - 18.17) < 0.01,
                  f"lambda={fk.lambda1:.6f}"),
            Check("bound ratio avr=0.5 vs avr=1", scale, 0.5, abs(scale - 0.5) <= 1e-12)]


# ---------------------------------------------------------------- J-functional


def _bump(grid, centre, radius, amplitude):
    d = grid.radius(centre) / radius
    out = np.zeros(grid.dims)
    inside = d < 1
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - d[inside] ** 2))
    return out


def crit_j_minimality(ctx, trials: int = 50, seed: int = 7):
    g = Grid.box(-1.0, 1.0, 256)
    r = g.radius((0.0, 0.0))
    r0 = 0.2
    w = ScalarField(g, np.log(np.maximum(r, g.h) / r0))
    obstacle = RegionMask(g, r <= r0)
    inner, outer = 0.35, 0.9
    window = RegionMask(g, (r >= inner) & (r <= outer))
    rng = np.random.default_rng(seed)
    worst = math.inf
    fails = 0
    for _ in range(trials):
        s = rng.uniform(0.05, 0.12)
        rad = rng.uniform(inner + s + 2 * g.h, outer - s - 2 * g.h)
        ang = rng.uniform(0, 2 * math.pi)
        amp = 0.1 * (1 if rng.random() < 0.5 else -1)
        v = ScalarField(g, w.values + _bump(g, (rad * math.cos(ang), rad * math.sin(ang)), s, amp))
        J = imcf_functional(w, v, window, obstacle)
        worst = min(worst, J.Jv - J.Jw)
        fails += J.Jw > J.Jv
    return [Check("trials with Jw > Jv", fails, 0, fails == 0, f"min Jv-Jw={worst:.3e}")]


# ---------------------------------------------------------------- registry


CRITERIA: dict = {
    1: ("Hull oracle: star(5,0.35) on 512² within 2% of the convex hull", crit_hull_oracle, 60.0),
    2: ("Outward-minimising test: disk, blob, star", crit_outward, None),
    3: ("Hull idempotence and monotonicity on 20 random instances", crit_idempotence, None),
    4: ("Flat ball capacities: 1D engine and grid solver", crit_radial_capacity, None),
    5: ("p -> 1 desk check: disk schedule and star", crit_limit, 600.0),
    6: ("Inequality chain and Sobolev ratio bound", crit_chain, None),
    7: ("Pathology trichotomy: cusp, cylinder, cigar", crit_trichotomy, 5.0),
    8: ("Cigar IMCF: closed form, residual, properness flag", crit_cigar_imcf, None),
    9: ("Cone a=0.5 n=3: Willmore and isoperimetric equalities", crit_cone, None),
    10: ("Dini comparison in the unit square", crit_dini, None),
    11: ("Polya-Szego campaign: 100 random fields on 512²", crit_polya_szego, 300.0),
    12: ("Faber-Krahn: square, disk, bound, avr scaling", crit_faber_krahn, None),
    13: ("J-functional minimality against 50 perturbations", crit_j_minimality, None),
    14: ("Determinism: two deterministic verify runs give identical manifests", None, None),
}


def run_criteria(ids=None, ctx: Optional[dict] = None,
                 progress: Optional[Callable[[CriterionResult], None]] = None) -> list:
    """Run the selected criteria (all but the determinism one by default)."""
    ctx = {} if ctx is None else ctx
    ids = sorted(CRITERIA) if ids is None else sorted(ids)
    out = []
    for cid in ids:
        title, fn, limit = CRITERIA[cid]
        if fn is None:
            continue
        res = CriterionResult(cid, title, runtime_limit=limit)
        t0 = time.perf_counter()
        try:
            res.checks = fn(ctx)
        except Exception:  # a crashing criterion is reported, not fatal
            res.error = traceback.format_exc(limit=3)
        res.runtime = time.perf_counter() - t0
        out.append(res)
        if progress is not None:
            progress(res)
    return out
