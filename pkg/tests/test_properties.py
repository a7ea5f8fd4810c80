"""Invariants as property tests over random admissible parameters."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from insider_game import bsde, closedform as cf, enlargement, scenario as sc

rates = st.floats(0.0, 0.08)
sigmas = st.floats(0.05, 0.6)
rhos = st.floats(-0.9, 0.0)
horizons = st.floats(0.2, 3.0)


@st.composite
def continuous_params(draw):
    r = draw(rates)
    lam = draw(st.floats(0.2, 1.0))
    return dict(r=r, mu0=r + draw(st.floats(-0.05, 0.3)), sigma=draw(sigmas), lam=lam,
                a=lam * draw(st.floats(0.01, 0.95)), b=draw(st.floats(0.05, 1.0)), rho=draw(rhos),
                T=draw(horizons))


def _ctl(pair, t=0.0, state=0.0):
    return {k: float(np.ravel(v)[0]) for k, v in pair.evaluate(np.array([t]), state).items()}


@settings(max_examples=60, deadline=None)
@given(continuous_params())
def test_robust_is_half_neutral(p):
    s = sc.baseline_s0(**p)
    r = _ctl(cf.small_robust_no_insider(s)[0])
    n = _ctl(cf.small_neutral_no_insider(sc.with_ambiguity(s, False))[0])
    assert abs(r["pi"] - n["pi"] / 2) <= 1e-12 * max(1.0, abs(n["pi"]))
    assert abs(r["kappa"] - n["kappa"] / 2) <= 1e-12 * max(1.0, abs(n["kappa"]))


@settings(max_examples=60, deadline=None)
@given(continuous_params())
def test_value_gap_identity(p):
    s = sc.baseline_s0(**p)
    V = cf.small_robust_no_insider(s)[1].analytic
    Vn = cf.small_neutral_no_insider(sc.with_ambiguity(s, False))[1].analytic
    iota = (p["mu0"] - p["r"]) / p["sigma"]
    prem = p["lam"] - p["a"] + p["rho"] * p["b"] * iota
    gap = -0.25 * (iota ** 2 + prem ** 2 / ((1 - p["rho"] ** 2) * p["b"] ** 2)) * p["T"]
    assert math.isclose(V - Vn, gap, rel_tol=1e-10, abs_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(continuous_params(), st.floats(0.0, 0.99), st.floats(-2.0, 2.0))
def test_first_order_conditions_vanish(p, frac, state):
    s = sc.baseline_s0(**p)
    pair, _ = cf.small_robust_no_insider(s)
    r1, r2 = cf.foc_residuals(s, pair, frac * p["T"])
    assert np.max(np.abs(r1)) < 1e-10 and np.max(np.abs(r2)) < 1e-10
    si = sc.with_insider(sc.baseline_s0(**{**p, "rho": 0.0}), T0=p["T"] + 1.0)
    pair, _ = cf.small_robust_insider_insurance(si)
    r1, r2 = cf.foc_residuals(si, pair, frac * p["T"], state)
    assert np.max(np.abs(r1)) < 1e-9 and np.max(np.abs(r2)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(continuous_params(), st.floats(0.1, 50.0))
def test_wealth_scale_shifts_value_only(p, x0):
    s1 = sc.baseline_s0(**p)
    s2 = sc.baseline_s0(**p, X0=x0)
    (a, va), (b, vb) = cf.small_robust_no_insider(s1), cf.small_robust_no_insider(s2)
    assert _ctl(a) == _ctl(b)
    assert math.isclose(vb.analytic - va.analytic, math.log(x0), rel_tol=1e-12, abs_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.6), st.floats(0.01, 0.3), st.floats(0.1, 1.0))
def test_critical_time_decreases_in_asset_premium(iota, step, c):
    lo = cf.critical_time_from(iota, c)[0]
    hi = cf.critical_time_from(iota + step, c)[0]
    assert hi < lo


@settings(max_examples=30, deadline=None)
@given(continuous_params())
def test_scenario_text_round_trip(p):
    s = sc.baseline_s0(**p)
    assert sc.loads(sc.dumps(s)) == s


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 3.0))
def test_conditional_density_integrates_to_one(running, tail):
    y = np.linspace(running - 12 * math.sqrt(tail), running + 12 * math.sqrt(tail), 4001)
    dens = enlargement.donsker_conditional_density(y, running, tail)
    assert abs(np.trapezoid(dens, y) - 1.0) < 1e-6
    assert np.all(dens >= 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.9, 0.0), st.floats(0.0, 0.009))
def test_recovery_maps_zero_generator_gives_neutral(rho, varrho):
    s = sc.with_ambiguity(sc.baseline_s0(rho=rho, varrho=varrho), True)
    # the recovery maps are affine in z: solve theta1 = theta2 = 0 for z
    f = lambda z: np.array(bsde.recover_from_z(s, 0.0, z[0], z[1])[2:], dtype=float)  # noqa: E731
    f0 = f((0.0, 0.0))
    jac = np.column_stack([f((1.0, 0.0)) - f0, f((0.0, 1.0)) - f0])
    z = np.linalg.solve(jac, -f0)
    pi, ka, th1, th2 = (float(v) for v in bsde.recover_from_z(s, 0.0, z[0], z[1]))
    ref = _ctl(cf.large_neutral(sc.with_ambiguity(s, False))[0])
    assert abs(th1) < 1e-10 and abs(th2) < 1e-10
    assert math.isclose(pi, ref["pi"], rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(ka, ref["kappa"], rel_tol=1e-9, abs_tol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.0, 0.009))
def test_kappa_map_ignores_z1_when_uncorrelated(z1, z2, varrho):
    s = sc.baseline_s0(rho=0.0, varrho=varrho)
    k1 = bsde.recover_from_z(s, 0.0, z1, z2)[1]
    k2 = bsde.recover_from_z(s, 0.0, 0.0, z2)[1]
    assert k1 == k2
