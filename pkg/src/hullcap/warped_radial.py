"""One-dimensional engine for rotationally symmetric metrics.

A profile ``f`` defines the metric ``drho^2 + f(rho)^2 g_sphere`` on
``(0, inf) x S^(n-1)``.  Everything here reduces to quadratures in ``rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .field_core import unit_ball_volume, unit_sphere_area

__all__ = [
    "Tail",
    "WarpedProfile",
    "RadialVerdict",
    "RadialCapacity",
    "RadialIMCF",
    "flat",
    "cone",
    "cusp",
    "cylinder",
    "cigar",
    "paraboloid",
    "smooth_cone",
    "tabulated",
    "PRESETS",
    "sphere_area",
    "ball_volume",
    "avr",
    "radial_p_capacity",
    "radial_relative_capacity",
    "flat_ball_capacity",
    "radial_hull",
    "radial_imcf",
    "mean_curvature_radial",
    "willmore_radial",
]


@dataclass(frozen=True)
class Tail:
    """Large-rho behaviour of a profile.

    kind is ``"polynomial"`` (f ~ c*rho^rate), ``"exponential"``
    (f ~ c*exp(rate*rho)) or ``"bounded"`` (f -> rate, a finite positive limit).
    """

    kind: str
    rate: float

    def __post_init__(self):
        if self.kind not in ("polynomial", "exponential", "bounded"):
            raise ValueError(f"unknown tail kind {self.kind!r}")


class TailMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class WarpedProfile:
    n: int
    f: Callable[[float], float]
    f_prime: Callable[[float], float]
    tail: Tail
    name: str = "custom"
    check_tail: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension must be at least 2")
        for r in (1e-3, 0.5, 1.0, 5.0, 30.0):
            if not self.f(r) > 0:
                raise ValueError(f"profile {self.name} is not positive at rho={r}")
        if self.check_tail:
            self._self_check()

    def _self_check(self):
        a, b = 40.0, 80.0
        fa, fb = self.f(a), self.f(b)
        k, rate = self.tail.kind, self.tail.rate
        if k == "polynomial":
            est = math.log(fb / fa) / math.log(b / a)
            ok = abs(est - rate) < 0.05 + 0.05 * abs(rate)
        elif k == "exponential":
            est = (math.log(fb) - math.log(fa)) / (b - a)
            ok = abs(est - rate) < 0.02 + 0.02 * abs(rate)
        else:
            est = fb
            ok = abs(fb - rate) < 1e-3 * max(1.0, abs(rate)) and abs(fb - fa) < 1e-3 * max(1.0, abs(rate))
        if not ok:
            raise TailMismatchError(
                f"profile {self.name}: declared tail {k}({rate}) but sampled estimate {est:.4g}"
            )

    @property
    def sphere_constant(self) -> float:
        return unit_sphere_area(self.n)


def flat(n: int = 3) -> WarpedProfile:
    return WarpedProfile(n, lambda r: r, lambda r: 1.0, Tail("polynomial", 1.0), "flat")


def cone(a: float, n: int = 3) -> WarpedProfile:
    if not 0 < a <= 1:
        raise ValueError("cone slope must be in (0, 1]")
    return WarpedProfile(n, lambda r: a * r, lambda r: a, Tail("polynomial", 1.0), f"cone({a})")


def cusp(n: int = 3) -> WarpedProfile:
    return WarpedProfile(
        n, lambda r: math.exp(-r), lambda r: -math.exp(-r), Tail("exponential", -1.0), "cusp"
    )


def cylinder(n: int = 3) -> WarpedProfile:
    return WarpedProfile(n, lambda r: 1.0, lambda r: 0.0, Tail("bounded", 1.0), "cylinder")


def cigar(n: int = 2) -> WarpedProfile:
    return WarpedProfile(
        n, math.tanh, lambda r: 1.0 / math.cosh(r) ** 2, Tail("bounded", 1.0), "cigar"
    )


def paraboloid(n: int = 3) -> WarpedProfile:
    """f = rho / sqrt(1 + rho): grows like sqrt(rho), so its AVR is 0."""
    return WarpedProfile(
        n,
        lambda r: r / math.sqrt(1 + r),
        lambda r: (2 + r) / (2 * (1 + r) ** 1.5),
        Tail("polynomial", 0.5),
        "paraboloid",
    )


def smooth_cone(a: float, n: int = 3) -> WarpedProfile:
    """Smooth at the pole, f' >= a everywhere, asymptotic to the cone of slope a."""
    if not 0 < a <= 1:
        raise ValueError("slope must be in (0, 1]")
    return WarpedProfile(
        n,
        lambda r: a * r + (1 - a) * math.tanh(r),
        lambda r: a + (1 - a) / math.cosh(r) ** 2,
        Tail("polynomial", 1.0),
        f"smooth_cone({a})",
    )


def tabulated(n: int, rho, fvals, tail: Tail, name="table") -> WarpedProfile:
    """Profile from samples, interpolated by a monotone cubic.

    Beyond the last sample the tail descriptor extends f.
    """
    from scipy.interpolate import PchipInterpolator

    rho = np.asarray(rho, dtype=float)
    fvals = np.asarray(fvals, dtype=float)
    if np.any(np.diff(rho) <= 0) or np.any(fvals <= 0):
        raise ValueError("table needs increasing rho and positive f")
    pch = PchipInterpolator(rho, fvals)
    dp = pch.derivative()
    r1, f1 = rho[-1], fvals[-1]

    def f(r):
        if r <= r1:
            return float(pch(max(r, rho[0])))
        if tail.kind == "polynomial":
            return f1 * (r / r1) ** tail.rate
        if tail.kind == "exponential":
            return f1 * math.exp(tail.rate * (r - r1))
        return tail.rate + (f1 - tail.rate) * math.exp(-(r - r1))

    def fp(r):
        if r <= r1:
            return float(dp(max(r, rho[0])))
        return (f(r + 1e-6) - f(r - 1e-6)) / 2e-6

    return WarpedProfile(n, f, fp, tail, name)


PRESETS = {
    "flat": flat,
    "cone": cone,
    "cusp": cusp,
    "cylinder": cylinder,
    "cigar": cigar,
    "paraboloid": paraboloid,
    "smooth_cone": smooth_cone,
}


# ---------------------------------------------------------------- measures


def sphere_area(profile: WarpedProfile, rho: float) -> float:
    if rho <= 0:
        raise ValueError("rho must be positive")
    return profile.sphere_constant * profile.f(rho) ** (profile.n - 1)


def ball_volume(profile: WarpedProfile, rho: float) -> float:
    if rho <= 0:
        raise ValueError("rho must be positive")
    m = profile.n - 1
    pts = [x for x in (1.0, 10.0) if x < rho]
    val, err = integrate.quad(lambda s: profile.f(s) ** m, 0.0, rho, limit=400,
                              epsabs=0.0, epsrel=1e-12, points=pts or None)
    if not math.isfinite(val):
        raise FloatingPointError(f"volume quadrature failed for {profile.name}")
    return profile.sphere_constant * val


def avr(profile: WarpedProfile, *, return_note: bool = False, tol: float = 1e-6):
    """Asymptotic volume ratio lim |B(rho)| / (|B^n| rho^n).

    The ratio is sampled at rho = 10 * 2^k and extrapolated in 1/rho (volume
    defects of smooth caps enter at that order).  Profiles with sub-linear or
    bounded growth give 0.
    """
    n = profile.n
    t = profile.tail
    note = "converged"
    if (t.kind == "polynomial" and t.rate < 1) or t.kind == "bounded" or (
        t.kind == "exponential" and t.rate < 0
    ):
        value, note = 0.0, "sub-Euclidean growth"
    elif (t.kind == "polynomial" and t.rate > 1) or (t.kind == "exponential" and t.rate > 0):
        value, note = math.inf, "super-Euclidean growth"
    else:
        rhos = 10.0 * 2.0 ** np.arange(0, 9)
        wb = unit_ball_volume(n)
        ratios = np.array([ball_volume(profile, r) / (wb * r ** n) for r in rhos])
        extrap = 2 * ratios[1:] - ratios[:-1]  # Richardson in 1/rho
        value = float(extrap[-1])
        if abs(extrap[-1] - extrap[-2]) > tol * max(1.0, abs(value)):
            value, note = 0.0, "sub-Euclidean growth (ratio sequence did not settle)"
    if return_note:
        return value, note
    return value


# ---------------------------------------------------------------- capacities


@dataclass(frozen=True)
class RadialCapacity:
    capacity: float
    parabolic: bool
    integral: float

    def __iter__(self):
        yield self.capacity
        yield self.parabolic


def _tail_integrable(profile: WarpedProfile, m: float) -> bool:
    t = profile.tail
    if t.kind == "polynomial":
        return t.rate * m > 1
    if t.kind == "exponential":
        return t.rate > 0
    return False


def _scaled_integral(profile: WarpedProfile, rho0: float, m: float, R: float = math.inf) -> float:
    """J = int_rho0^R (f/f(rho0))^(-m) drho, evaluated in log space."""
    f0 = profile.f(rho0)
    lf0 = math.log(f0)

    def g(s):
        return math.exp(-m * (math.log(profile.f(s)) - lf0))

    fp0 = profile.f_prime(rho0)
    width = f0 / (m * fp0) if fp0 > 0 else 1.0
    width = min(max(width, 1e-12), 1.0)
    edges = [rho0 + width * k for k in (0, 1, 4, 16, 64)]
    edges = [e for e in edges if e < R] + ([R] if math.isfinite(R) else [])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, _ = integrate.quad(g, a, b, limit=200, epsabs=0.0, epsrel=1e-12)
        total += v
    if not math.isfinite(R):
        a = edges[-1]
        # finite chunk then the improper tail
        b = max(a * 4, a + 10.0)
        v, _ = integrate.quad(g, a, b, limit=400, epsabs=0.0, epsrel=1e-12)
        total += v
        v, _ = integrate.quad(g, b, math.inf, limit=400, epsabs=1e-300, epsrel=1e-10)
        total += v
    return total


def radial_p_capacity(profile: WarpedProfile, rho0: float, p: float) -> RadialCapacity:
    """Capacity of the ball {rho <= rho0}: |S| f0^(n-1) J^-(p-1)."""
    if rho0 <= 0 or p <= 1:
        raise ValueError("need rho0 > 0 and p > 1")
    m = (profile.n - 1) / (p - 1)
    if not _tail_integrable(profile, m):
        return RadialCapacity(0.0, True, math.inf)
    J = _scaled_integral(profile, rho0, m)
    f0 = profile.f(rho0)
    cap = profile.sphere_constant * f0 ** (profile.n - 1) * math.exp(-(p - 1) * math.log(J))
    return RadialCapacity(cap, False, J * f0 ** (-m))


def radial_relative_capacity(profile: WarpedProfile, rho0: float, p: float, R: float) -> float:
    """Capacity of {rho <= rho0} relative to the ball {rho < R}."""
    if not 0 < rho0 < R:
        raise ValueError("need 0 < rho0 < R")
    m = (profile.n - 1) / (p - 1)
    J = _scaled_integral(profile, rho0, m, R)
    f0 = profile.f(rho0)
    return profile.sphere_constant * f0 ** (profile.n - 1) * J ** (-(p - 1))


def flat_ball_capacity(n: int, p: float, r0: float, R: float = math.inf) -> float:
    """Closed form p-capacity of a Euclidean ball (relative to B_R if R finite)."""
    S = unit_sphere_area(n)
    k = (n - 1) / (p - 1)
    if math.isinf(R):
        if p >= n:
            return 0.0
        return S * ((n - p) / (p - 1)) ** (p - 1) * r0 ** (n - p)
    if abs(k - 1) < 1e-14:
        I = math.log(R / r0)
    else:
        I = (r0 ** (1 - k) - R ** (1 - k)) / (k - 1)
    return S * I ** (-(p - 1))


# ---------------------------------------------------------------- hulls & flows


@dataclass(frozen=True)
class RadialVerdict:
    """Classification of the least-area problem with obstacle {rho <= rho0}.

    Minimality is only certified among radial competitors {rho <= r}.
    """

    kind: str
    witness: dict
    radial_competitors_only: bool = True


_KINDS = ("hull_exists_unique", "no_solution", "non_unique_unbounded_volume")


def _tail_area_limit(profile: WarpedProfile) -> float:
    t = profile.tail
    S = profile.sphere_constant
    if t.kind == "polynomial":
        return 0.0 if t.rate < 0 else (math.inf if t.rate > 0 else S)
    if t.kind == "exponential":
        return 0.0 if t.rate < 0 else math.inf
    return S * t.rate ** (profile.n - 1)


def radial_hull(profile: WarpedProfile, rho0: float, rho_max: float = 200.0,
                samples: int = 4000, rtol: float = 1e-9) -> RadialVerdict:
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    rhos = np.unique(np.r_[rho0, np.geomspace(rho0, max(rho_max, 2 * rho0), samples)])
    A = np.array([sphere_area(profile, r) for r in rhos])
    A0 = A[0]
    a_inf = _tail_area_limit(profile)
    amin = float(A.min())
    scale = max(A0, 1e-300)
    # a zero limit is never attained because f > 0
    if a_inf == 0.0 or a_inf < amin - rtol * scale:
        return RadialVerdict("no_solution", {"inf_area": a_inf, "attained": False,
                                             "area_at_rho0": A0})
    # radii attaining the minimum
    at_min = np.flatnonzero(A <= amin + rtol * scale)
    tail_attains = abs(a_inf - amin) <= rtol * scale
    if tail_attains and at_min[-1] == len(A) - 1:
        return RadialVerdict("non_unique_unbounded_volume",
                             {"min_area": amin, "plateau_from": float(rhos[at_min[0]])})
    # several separated near-minima hint at oscillation
    if len(at_min) > 1 and np.any(np.diff(at_min) > 1):
        return RadialVerdict("hull_exists_unique",
                             {"hull_radius": float(rhos[at_min[-1]]), "min_area": amin,
                              "inconclusive": True})
    return RadialVerdict("hull_exists_unique",
                         {"hull_radius": float(rhos[at_min[-1]]), "min_area": amin,
                          "strictly_outward_minimising": bool(at_min[-1] == 0
                                                              and np.all(A[1:] > A0)),
                          "inconclusive": False})


class SmoothFlowBreakdown(ValueError):
    pass


@dataclass(frozen=True)
class RadialIMCF:
    """Arrival time w(rho) = (n-1) log(f(rho)/f(rho0)) of the round spheres."""

    profile: WarpedProfile
    rho0: float
    sup: float
    proper_but_bounded: bool

    def __call__(self, rho):
        r = np.asarray(rho, dtype=float)
        fv = np.vectorize(self.profile.f, otypes=[float])(r)
        out = (self.profile.n - 1) * np.log(fv / self.profile.f(self.rho0))
        return out if out.ndim else float(out)

    def speed(self, rho):
        """|Dw| = (n-1) f'/f, which equals the mean curvature of {rho = const}."""
        return mean_curvature_radial(self.profile, rho)


def radial_imcf(profile: WarpedProfile, rho0: float, rho_max: float = 200.0) -> RadialIMCF:
    rhos = np.geomspace(rho0, rho_max, 2000)
    fp = np.array([profile.f_prime(r) for r in rhos])
    if np.any(fp <= 0):
        bad = float(rhos[np.argmax(fp <= 0)])
        raise SmoothFlowBreakdown(f"f' <= 0 at rho={bad:.4g}: round spheres stop expanding")
    t = profile.tail
    f0 = profile.f(rho0)
    if t.kind == "bounded":
        sup = (profile.n - 1) * math.log(t.rate / f0)
    else:
        sup = math.inf
    return RadialIMCF(profile, rho0, sup, bool(math.isfinite(sup)))


def mean_curvature_radial(profile: WarpedProfile, rho: float) -> float:
    return (profile.n - 1) * profile.f_prime(rho) / profile.f(rho)


def willmore_radial(profile: WarpedProfile, rho: float) -> float:
    """Integral of |H/(n-1)|^(n-1) over {rho = const}, i.e. |S| f'(rho)^(n-1)."""
    return profile.sphere_constant * abs(profile.f_prime(rho)) ** (profile.n - 1)
