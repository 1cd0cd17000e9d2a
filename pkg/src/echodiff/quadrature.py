"""
Adaptive quadrature and the nested (E, R) integral over the TLS distribution.

The inner rate integral uses R = R_max sin^2(theta), which turns
P(R, E) dR into 2 dtheta / sin(theta); the "log-spaced" grid additionally
maps u = ln tan(theta/2) so that P dR = 2 du exactly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .model import K_B, DomainError, TLSDistribution, r_max


class ConvergenceError(RuntimeError):
    """Subdivision budget exhausted; carries the best estimate."""

    def __init__(self, msg, value, error):
        super().__init__(msg)
        self.value = value
        self.error = error


class DegenerateDomainError(ValueError):
    pass


@dataclass(frozen=True)
class IntegrationPlan:
    rel_tol: float = 1e-6
    abs_tol: float = 0.0
    max_subdivisions: int = 200
    r_grid_kind: str = "log-spaced"  # or "singularity-mapped"
    e_grid_points: int = 16

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if not self.abs_tol >= 0:
            raise ValueError("abs_tol must be >= 0")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.r_grid_kind not in ("log-spaced", "singularity-mapped"):
            raise ValueError(f"unknown r_grid_kind {self.r_grid_kind!r}")
        if self.e_grid_points < 8:
            raise ValueError("e_grid_points must be >= 8")


# Gauss-Kronrod 7/15 nodes on [-1, 1] (positive half, centre last).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 nodes ascending
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
_GW[1::2] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f, a, b):
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    x = c + h * _NODES
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape)
    if not np.all(np.isfinite(fx)):
        raise FloatingPointError(f"non-finite integrand on [{a}, {b}]")
    k = h * float(np.dot(_KW, fx))
    g = h * float(np.dot(_GW, fx))
    return k, abs(k - g)


def integrate_1d(f: Callable, a: float, b: float, plan: IntegrationPlan = IntegrationPlan(),
                 initial_panels: int = 1):
    """
    Adaptive Gauss-Kronrod (7/15) integral of a vectorized `f` over [a, b].

    Integrable endpoint singularities are fine since the nodes are interior.
    Returns (value, error_estimate). Raises ConvergenceError carrying the
    best estimate if `plan.max_subdivisions` bisections do not suffice.
    """
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    edges = np.linspace(a, b, initial_panels + 1)
    heap = []
    for i in range(initial_panels):
        v, e = _gk15(f, edges[i], edges[i + 1])
        heap.append((-e, i, edges[i], edges[i + 1], v))
    heapq.heapify(heap)
    counter = initial_panels

    def totals():
        # summed in interval order so results do not depend on heap history
        items = sorted(heap, key=lambda t: t[2])
        return math.fsum(t[4] for t in items), math.fsum(-t[0] for t in items)

    value, err = totals()
    splits = 0
    while err > max(plan.abs_tol, plan.rel_tol * abs(value)):
        if splits >= plan.max_subdivisions:
            raise ConvergenceError(
                f"integrate_1d: {splits} subdivisions, error {err:.3g} > tolerance",
                value, err)
        neg_e, _, lo, hi, _ = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise ConvergenceError("integrate_1d: interval below float resolution", value, err)
        for l, r in ((lo, mid), (mid, hi)):
            v, e = _gk15(f, l, r)
            counter += 1
            heapq.heappush(heap, (-e, counter, l, r, v))
        splits += 1
        value, err = totals()
    return value, err


def _inner_bounds(rmax: float, r_min: float, kind: str):
    # theta_min = asin(sqrt(r_min / rmax)); returns the bounds of the mapped variable
    ratio = r_min / rmax
    if kind == "singularity-mapped":
        return math.asin(math.sqrt(ratio)), 0.5 * math.pi
    # u = ln tan(theta/2); tan(theta/2) = sqrt((1-c)/(1+c)), c = cos(theta)
    c = math.sqrt(1.0 - ratio)
    return 0.5 * math.log(ratio / (1.0 + c) ** 2), 0.0


def _rate_and_weight(v, rmax, kind):
    if kind == "singularity-mapped":
        s = np.sin(v)
        return rmax * s * s, 2.0 / s
    theta = 2.0 * np.arctan(np.exp(v))
    s = np.sin(theta)
    return rmax * s * s, np.full_like(v, 2.0)


def inner_mass(e_split, temperature, dist: TLSDistribution):
    """Closed form of the rate integral of P over [r_min, R_max(E))."""
    rmax = r_max(e_split, temperature, dist)
    rmax = np.asarray(rmax, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        # 2 atanh(c) = 2 ln(1 + c) + ln(R_max / r_min), c = sqrt(1 - r_min/R_max)
        c = np.sqrt(np.clip(1.0 - dist.r_min / rmax, 0.0, None))
        val = 2.0 * np.log1p(c) + np.log(rmax / dist.r_min)
    val = np.where(rmax > dist.r_min, val, 0.0)
    return val if val.ndim else float(val)


def energy_domain(dist: TLSDistribution, temperature: float):
    """[E_lo, E_hi] where R_max(E) exceeds r_min."""
    e_hi = dist.e_max_factor * K_B * temperature
    if r_max(e_hi, temperature, dist) <= dist.r_min:
        raise DegenerateDomainError(
            "R_max(E) <= r_min over the whole energy range; lower r_min or raise r_max_coeff")
    kt = K_B * temperature
    x_lo = brentq(lambda x: r_max(x * kt, temperature, dist) - dist.r_min,
                  0.0, dist.e_max_factor, xtol=1e-300, rtol=1e-15)
    return x_lo * kt, e_hi


def _energy_map(dist, temperature):
    # E = kT (x_lo + s^2): removes the sqrt(E - E_lo) onset of the inner mass
    e_lo, e_hi = energy_domain(dist, temperature)
    kt = K_B * temperature
    x_lo = e_lo / kt
    s_hi = math.sqrt(e_hi / kt - x_lo)

    def energy(s):
        return kt * (x_lo + s * s)

    def jacobian(s):
        return kt * 2.0 * s

    return energy, jacobian, s_hi


def tls_normalization(dist: TLSDistribution, temperature: float, plan: IntegrationPlan = IntegrationPlan()):
    """Total mass of P(R, E) over the domain, via the closed-form rate integral."""
    energy, jac, s_hi = _energy_map(dist, temperature)
    tight = IntegrationPlan(rel_tol=min(0.01 * plan.rel_tol, 1e-9), abs_tol=0.0,
                            max_subdivisions=max(plan.max_subdivisions, 500),
                            e_grid_points=plan.e_grid_points)
    return integrate_1d(lambda s: inner_mass(energy(s), temperature, dist) * jac(s),
                        0.0, s_hi, tight, initial_panels=plan.e_grid_points)


def integrate_tls(f: Callable, dist: TLSDistribution, temperature: float,
                  plan: IntegrationPlan = IntegrationPlan()):
    """
    Nested integral of f(R, E) P(R, E) over the TLS domain.

    `f` must accept an array of rates and a scalar energy. The outer
    integral is over E, the inner over R. Inner error estimates are added to
    the outer one. With dist.normalize the result is divided by the
    domain mass from `tls_normalization`.
    """
    energy, jac, s_hi = _energy_map(dist, temperature)
    kind = plan.r_grid_kind
    inner_plan = IntegrationPlan(rel_tol=plan.rel_tol * 0.1, abs_tol=0.0,
                                 max_subdivisions=plan.max_subdivisions,
                                 r_grid_kind=kind, e_grid_points=plan.e_grid_points)
    inner_err = []

    def inner(e):
        rm = float(r_max(e, temperature, dist))
        if rm <= dist.r_min:
            return 0.0
        lo, hi = _inner_bounds(rm, dist.r_min, kind)
        if not lo < hi:
            return 0.0

        def g(v):
            rate, w = _rate_and_weight(v, rm, kind)
            return w * np.asarray(f(rate, e), dtype=float)

        val, err = integrate_1d(g, lo, hi, inner_plan)
        inner_err.append(err)
        return val

    def outer(ss):
        return np.array([inner(float(energy(x))) * jac(x) for x in ss])

    value, err = integrate_1d(outer, 0.0, s_hi, plan, initial_panels=plan.e_grid_points)
    # mean inner error times the mapped width approximates the integral of inner errors
    err = err + s_hi * jac(s_hi) * math.fsum(inner_err) / max(len(inner_err), 1)
    if dist.normalize:
        norm, nerr = tls_normalization(dist, temperature, plan)
        value, err = value / norm, err / norm + abs(value) * nerr / norm**2
    return value, err
