import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as si

from echodiff.model import K_B, TLSDistribution, r_max
from echodiff.quadrature import (
    ConvergenceError,
    DegenerateDomainError,
    IntegrationPlan,
    _inner_bounds,
    _rate_and_weight,
    energy_domain,
    inner_mass,
    integrate_1d,
    integrate_tls,
    tls_normalization,
)

T = 0.7
PLAN = IntegrationPlan(rel_tol=1e-6)


# ---------------------------------------------------------------- integrate_1d


def test_linear():
    v, e = integrate_1d(lambda x: x, 0.0, 1.0)
    assert v == pytest.approx(0.5, rel=1e-15)


def test_inverse_sqrt_endpoint_singularity():
    v, e = integrate_1d(lambda x: 1 / np.sqrt(1 - x), 0.0, 1.0, PLAN)
    assert v == pytest.approx(2.0, rel=1e-6)
    assert abs(v - 2.0) <= max(e, 1e-6 * 2.0)


def test_sech2_over_truncated_line():
    L = 20.0
    v, _ = integrate_1d(lambda x: 1 / np.cosh(x) ** 2, -L, L, PLAN)
    assert v == pytest.approx(2.0, rel=1e-6)
    # half line, analytic tanh antiderivative
    v, _ = integrate_1d(lambda x: 1 / np.cosh(x) ** 2, 0.0, L, PLAN)
    assert v == pytest.approx(math.tanh(L), rel=1e-6)


def test_budget_exhaustion_carries_estimate():
    plan = IntegrationPlan(rel_tol=1e-12, max_subdivisions=2)
    with pytest.raises(ConvergenceError) as info:
        integrate_1d(lambda x: 1 / np.sqrt(x), 0.0, 1.0, plan)
    assert info.value.value == pytest.approx(2.0, rel=0.1)
    assert info.value.error > 0


def test_plan_validation():
    for kw in ({"rel_tol": 0.0}, {"abs_tol": -1.0}, {"max_subdivisions": 0},
               {"e_grid_points": 7}, {"r_grid_kind": "uniform"}):
        with pytest.raises(ValueError):
            IntegrationPlan(**kw)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(0, 6), a=st.floats(-3, 0), w=st.floats(0.1, 4))
def test_polynomials_exact(k, a, w):
    b = a + w
    v, _ = integrate_1d(lambda x: x**k, a, b)
    exact = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
    assert v == pytest.approx(exact, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------- TLS integral


def test_normalized_constant_integrates_to_one():
    v, e = integrate_tls(lambda r, E: np.ones_like(r), TLSDistribution(), T, PLAN)
    assert abs(v - 1.0) <= 1e-6


@pytest.mark.parametrize("kind", ["log-spaced", "singularity-mapped"])
def test_inner_substitution_matches_closed_form(kind):
    dist = TLSDistribution()
    plan = IntegrationPlan(rel_tol=1e-10, r_grid_kind=kind)
    for x in (0.05, 0.5, 2.0, 10.0):
        E = x * K_B * T
        rm = r_max(E, T, dist)
        lo, hi = _inner_bounds(rm, dist.r_min, kind)
        v, _ = integrate_1d(lambda u: _rate_and_weight(u, rm, kind)[1], lo, hi, plan)
        with mp.workdps(40):
            exact = float(2 * mp.atanh(mp.sqrt(1 - mp.mpf(dist.r_min) / mp.mpf(rm))))
        assert v == pytest.approx(exact, rel=1e-9)
        assert inner_mass(E, T, dist) == pytest.approx(exact, rel=1e-12)


def _step_fraction(kind, cut):
    dist = TLSDistribution()
    E = 2 * K_B * T
    rm = r_max(E, T, dist)
    lo, hi = _inner_bounds(rm, dist.r_min, kind)

    def g(u):
        rate, w = _rate_and_weight(u, rm, kind)
        return w * (rate > cut * rm)

    part, _ = integrate_1d(g, lo, hi, IntegrationPlan(rel_tol=1e-8, max_subdivisions=400))
    total = inner_mass(E, T, dist)
    # 10^7-point midpoint sum in theta = asin(sqrt(R/R_max)), where P dR = 2 dtheta / sin(theta)
    th_lo = math.asin(math.sqrt(dist.r_min / rm))
    n = 10**7
    h = (0.5 * math.pi - th_lo) / n
    th = th_lo + h * (np.arange(n) + 0.5)
    w = 2.0 / np.sin(th)
    riemann = w[th > math.asin(math.sqrt(cut))].sum() / w.sum()
    return part / total, riemann


def test_step_fraction_against_riemann_sum():
    got, riemann = _step_fraction("log-spaced", 0.5)
    assert got == pytest.approx(riemann, rel=1e-6)


@pytest.mark.parametrize("kind", ["log-spaced", "singularity-mapped"])
def test_step_fraction_off_panel_edge(kind):
    # on the sin^2 map a jump at R_max/2 sits next to a bisection edge, where no node samples it
    got, riemann = _step_fraction(kind, 1 / 3)
    assert got == pytest.approx(riemann, rel=1e-6)


def _nested_scipy(f_e, dist, temperature):
    e_lo, e_hi = energy_domain(dist, temperature)

    def inner(E):
        rm = r_max(E, temperature, dist)
        if rm <= dist.r_min:
            return 0.0
        umax = math.log(rm)
        # R = e^u; P dR = sqrt(rm) / sqrt(rm - e^u) du, singular like (umax - u)^(-1/2)
        g = lambda u: math.sqrt(rm) * math.sqrt(umax - u) / math.sqrt(rm - math.exp(u)) \
            if u < umax else math.sqrt(rm / math.exp(umax))
        v, _ = si.quad(g, math.log(dist.r_min), umax, weight="alg", wvar=(0.0, -0.5),
                       epsabs=0, epsrel=1e-11, limit=200)
        return v

    kt = K_B * temperature
    val, err = si.quad(lambda x: f_e(x * kt) * inner(x * kt) * kt, e_lo / kt, e_hi / kt,
                       epsabs=0, epsrel=1e-10, limit=400)
    return val, err


def test_unnormalized_sech2_matches_nested_scipy_quadrature():
    dist = TLSDistribution(normalize=False)
    f_e = lambda E: 1 / np.cosh(E / (2 * K_B * T)) ** 2
    ours, err = integrate_tls(lambda r, E: np.full_like(r, f_e(E)), dist, T, PLAN)
    ref, ref_err = _nested_scipy(f_e, dist, T)
    assert abs(ours - ref) <= err + ref_err + 1e-6 * abs(ref)
    assert ours == pytest.approx(ref, rel=1e-6)


def test_normalization_matches_nested_scipy_quadrature():
    dist = TLSDistribution()
    norm, _ = tls_normalization(dist, T, PLAN)
    ref, _ = _nested_scipy(lambda E: 1.0, dist, T)
    assert norm == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("kind", ["log-spaced", "singularity-mapped"])
def test_stable_under_plan_refinement(kind):
    dist = TLSDistribution()
    f = lambda r, E: np.exp(-r * 3e-7) * (1 / np.cosh(E / (2 * K_B * T)) ** 2)
    base = IntegrationPlan(rel_tol=1e-6, r_grid_kind=kind, e_grid_points=16)
    finer = IntegrationPlan(rel_tol=5e-7, r_grid_kind=kind, e_grid_points=32)
    a, _ = integrate_tls(f, dist, T, base)
    b, _ = integrate_tls(f, dist, T, finer)
    assert abs(a - b) <= 2 * base.rel_tol * abs(b)


def test_grid_kinds_agree():
    dist = TLSDistribution()
    f = lambda r, E: np.exp(-r * 1e-6)
    a, _ = integrate_tls(f, dist, T, IntegrationPlan(r_grid_kind="log-spaced"))
    b, _ = integrate_tls(f, dist, T, IntegrationPlan(r_grid_kind="singularity-mapped"))
    assert a == pytest.approx(b, rel=2e-6)


def test_enlarging_energy_domain_never_decreases_integral():
    f = lambda r, E: np.exp(-r * 1e-7)
    vals = [integrate_tls(f, TLSDistribution(e_max_factor=m, normalize=False), T, PLAN)[0]
            for m in (5.0, 8.0, 12.0, 20.0, 30.0)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_degenerate_domain():
    dist = TLSDistribution(r_min=1e30)
    with pytest.raises(DegenerateDomainError):
        integrate_tls(lambda r, E: np.ones_like(r), dist, T, PLAN)


def test_results_are_deterministic():
    f = lambda r, E: np.exp(-r * 2e-7)
    a = integrate_tls(f, TLSDistribution(), T, PLAN)
    b = integrate_tls(f, TLSDistribution(), T, PLAN)
    assert a == b
