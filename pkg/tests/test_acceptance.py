"""One test per acceptance criterion; tolerances are the contract values."""
import math
import time

import numpy as np

import frozen_values as ref
from insider_game import bsde, closedform as cf, oracle, scenario as sc
from insider_game.closedform import constant_pair
from insider_game.simulate import SimConfig, estimate_J, evolve, mean_se, simulate_drivers

MC = SimConfig(n_paths=100_000, dt=1e-3)


def _controls(pair, t=0.0, state=0.0):
    c = pair.evaluate(np.array([t]), state)
    return {k: float(np.ravel(v)[0]) for k, v in c.items()}


def test_c01_closed_form_reproduction(criterion):
    t0 = time.perf_counter()
    rob, rrep = cf.small_robust_no_insider(sc.baseline_s0())
    neu, nrep = cf.small_neutral_no_insider(sc.with_ambiguity(sc.baseline_s0(), False))
    elapsed = time.perf_counter() - t0
    r, n = _controls(rob), _controls(neu)
    errs = [abs(r["pi"] - ref.S0_ROBUST["pi"]), abs(r["kappa"] - ref.S0_ROBUST["kappa"]),
            abs(r["theta1"] - ref.S0_ROBUST["theta1"]), abs(r["theta2"] - ref.S0_ROBUST["theta2"]),
            abs(rrep.analytic - ref.S0_ROBUST["value"]),
            abs(n["pi"] - ref.S0_NEUTRAL["pi"]), abs(n["kappa"] - ref.S0_NEUTRAL["kappa"]),
            abs(nrep.analytic - ref.S0_NEUTRAL["value"])]
    ok = max(errs) < 1e-12 and elapsed < 1.0
    criterion(1, ok, f"max|err|={max(errs):.2e} (<1e-12) runtime={elapsed:.3f}s (<1s)")
    assert ok


def _random_parameters(rng):
    r = rng.uniform(0.0, 0.08)
    lam = rng.uniform(0.2, 1.0)
    return dict(r=r, mu0=r + rng.uniform(-0.05, 0.3), sigma=rng.uniform(0.05, 0.6), lam=lam,
                a=rng.uniform(0.0, 0.95 * lam), b=rng.uniform(0.05, 1.0), rho=-rng.uniform(0.0, 0.9),
                T=rng.uniform(0.2, 3.0))


def test_c02_halving_law_and_gap(criterion):
    rng = np.random.default_rng(2024)
    worst_half, worst_gap = 0.0, 0.0
    for _ in range(100):
        p = _random_parameters(rng)
        s = sc.baseline_s0(**p)
        rob, rrep = cf.small_robust_no_insider(s)
        neu, nrep = cf.small_neutral_no_insider(sc.with_ambiguity(s, False))
        r, n = _controls(rob), _controls(neu)
        worst_half = max(worst_half, abs(r["pi"] - n["pi"] / 2), abs(r["kappa"] - n["kappa"] / 2))
        iota = (p["mu0"] - p["r"]) / p["sigma"]
        rho, b = p["rho"], p["b"]
        prem = p["lam"] - p["a"] + rho * b * iota
        gap = -0.25 * (iota ** 2 + prem ** 2 / ((1 - rho ** 2) * b ** 2)) * p["T"]
        worst_gap = max(worst_gap, abs((rrep.analytic - nrep.analytic) - gap))
    ok = worst_half < 1e-12 and worst_gap < 1e-12
    criterion(2, ok, f"100-point sweep: max|robust-neutral/2|={worst_half:.2e} "
                     f"max|gap-identity err|={worst_gap:.2e} (<1e-12)")
    assert ok


def test_c03_insider_value_gains(criterion):
    base = sc.baseline_s0()
    V = cf.small_robust_no_insider(base)[1].analytic
    Vn = cf.small_neutral_no_insider(sc.with_ambiguity(base, False))[1].analytic
    dv = cf.small_robust_insider_insurance(sc.with_insider(base, source="Wbar"))[1].analytic - V
    dvn_ins = cf.small_neutral_insider(sc.with_ambiguity(sc.with_insider(base, source="Wbar"), False))[1].analytic - Vn
    dvn_ast = cf.small_neutral_insider(sc.with_ambiguity(sc.with_insider(base, source="W1"), False))[1].analytic - Vn
    errs = (abs(dv - ref.INSIDER_INSURANCE_DV), abs(dvn_ins - ref.INSIDER_NEUTRAL_DV),
            abs(dvn_ast - ref.INSIDER_NEUTRAL_DV), abs(dvn_ast - dvn_ins))
    ok = max(errs) < 1e-10
    criterion(3, ok, f"dV={dv:.10f} dV~(insurance)={dvn_ins:.10f} dV~(asset)={dvn_ast:.10f} "
                     f"max|err|={max(errs):.2e} (<1e-10)")
    assert ok


def test_c04_monte_carlo_consistency(criterion):
    s = sc.baseline_s0()
    pair, rep = cf.solve(s)
    t0 = time.perf_counter()
    J, J_se = estimate_J(s, pair, pair.theta, MC)
    t_j = time.perf_counter() - t0

    t0 = time.perf_counter()
    b = evolve(simulate_drivers(s, MC), constant_pair(mode="null"), pair.theta)
    e, e_se = mean_se(b.eps)
    t_e = time.perf_counter() - t0

    sn = sc.with_ambiguity(s, False)
    npair, nrep = cf.solve(sn)
    t0 = time.perf_counter()
    b = evolve(simulate_drivers(sn, MC), npair, None)
    lx, lx_se = mean_se(b.ln_x)
    t_n = time.perf_counter() - t0

    checks = (abs(J - rep.analytic) <= 3 * J_se, abs(e - 1) <= 3 * e_se,
              abs(lx - nrep.analytic) <= 3 * lx_se, max(t_j, t_e, t_n) < 60)
    ok = all(checks)
    criterion(4, ok, f"J={J:.5f}+-{J_se:.5f} vs {rep.analytic}; E[eps_T]={e:.5f}+-{e_se:.5f}; "
                     f"E[lnX_T]={lx:.5f}+-{lx_se:.5f} vs {nrep.analytic}; "
                     f"runtimes {t_j:.1f}/{t_e:.1f}/{t_n:.1f}s (<60s)")
    assert ok


def test_c05_saddle_verification(criterion):
    res = oracle.saddle_search(sc.baseline_s0(), oracle.SaddleGrid(), MC)
    exact = (np.allclose(res.u_hat, (0.625, 0.625), atol=1e-12)
             and np.allclose(res.v_hat, (-0.125, 0.25), atol=1e-12))
    gap_ok = abs(res.value_gap) <= 3 * res.gap_se + 1e-12
    ok = exact and gap_ok
    criterion(5, ok, f"saddle u={tuple(map(float, res.u_hat))} v={tuple(map(float, res.v_hat))}; "
                     f"maxmin-minmax={res.value_gap:.2e} (3se={3 * res.gap_se:.2e})")
    assert ok


def test_c06_first_order_conditions(criterion):
    s = sc.baseline_s0()
    pair, _ = cf.solve(s)
    parts, ok = [], True
    for name in ("pi", "kappa", "theta1", "theta2"):
        est, se = oracle.gateaux_check(s, pair, pair.theta, {name: 1.0}, MC)
        good = abs(est) <= 3 * se
        ok &= good
        parts.append(f"{name}:{est / se:+.2f}se")
    moved = constant_pair(1.2 * 0.625, 0.625, -0.125, 0.25)
    est, se = oracle.gateaux_check(s, moved, moved.theta, {"pi": 1.0}, MC)
    far = est < 0 and abs(est) > 5 * se
    ok &= far
    criterion(6, ok, f"at optimum {' '.join(parts)} (|.|<=3); at 1.2pi*: {est / se:+.1f}se (< -5)")
    assert ok


def test_c07_quadratic_bsde_cross_check(criterion):
    s = sc.baseline_s0()
    t0 = time.perf_counter()
    sol = bsde.quadratic_bsde_solve(s, SimConfig(n_paths=200_000, dt=1 / 500), shooting=1e-3)
    elapsed = time.perf_counter() - t0
    target = np.array([0.625, 0.625, -0.125, 0.25])
    at0 = sol.controls_mean[:, 0]
    avg = sol.controls_mean.mean(axis=1)
    rel = float(max(np.max(np.abs(at0 / target - 1)), np.max(np.abs(avg / target - 1))))
    c2_err = abs(sol.terminal_constant - ref.S0_ROBUST["value"])
    iters = sol.diagnostics["shooting_iterations"]
    ok = rel <= 0.02 and c2_err <= 2e-3 and iters <= 30 and elapsed < 300
    criterion(7, ok, f"max rel strategy err={rel:.2e} (<=2%) |c2-0.108125|={c2_err:.2e} (<=2e-3) "
                     f"shooting={iters} (<=30) runtime={elapsed:.0f}s (<300s)")
    assert ok


def test_c08_large_insurer_closed_form(criterion):
    pair, rep = cf.large_neutral(sc.with_ambiguity(sc.baseline_sl(), False))
    c = _controls(pair)
    errs = (abs(c["pi"] - ref.SL_NEUTRAL["pi"]), abs(c["kappa"] - ref.SL_NEUTRAL["kappa"]),
            abs(rep.analytic - ref.SL_NEUTRAL["value"]))
    # limit: error against the small neutral values shrinks linearly in varrho
    gaps = []
    for vr in (4e-4, 2e-4, 1e-4):
        p, r = cf.large_neutral(sc.with_ambiguity(sc.baseline_sl(varrho=vr), False))
        cc = _controls(p)
        gaps.append(max(abs(cc["pi"] - ref.S0_NEUTRAL["pi"]), abs(r.analytic - ref.S0_NEUTRAL["value"])))
    ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]]
    linear = all(abs(q - 2) < 0.05 for q in ratios)
    ok = max(errs) < 1e-10 and linear
    criterion(8, ok, f"SL max|err|={max(errs):.2e} (<1e-10); halving varrho shrinks gap by "
                     f"{ratios[0]:.3f}, {ratios[1]:.3f} (linear: ~2)")
    assert ok


def test_c09_jump_case(criterion):
    sj = sc.baseline_sj()
    rob, _ = cf.jump_robust_no_insider(sj)
    neu, _ = cf.jump_neutral_no_insider(sc.with_ambiguity(sj, False))
    r, n = _controls(rob), _controls(neu)
    errs = (abs(r["kappa"] - ref.SJ_ROBUST_KAPPA), abs(r["theta4"] - ref.SJ_ROBUST_THETA4),
            abs(n["kappa"] - ref.SJ_NEUTRAL_KAPPA))
    res = oracle.saddle_search(sj, oracle.SaddleGrid(), MC)
    step = oracle.SaddleGrid().kappa_range[2]
    mc_ok = abs(res.u_hat[1] - ref.SJ_ROBUST_KAPPA) <= step
    ok = max(errs) < 1e-10 and mc_ok
    gap = abs(res.u_hat[1] - ref.SJ_ROBUST_KAPPA)
    criterion(9, ok, f"SJ max|err|={max(errs):.2e} (<1e-10); MC max-min kappa={res.u_hat[1]}, "
                     f"|kappa-0.1548|={gap:.4f} (<=one grid step {step})")
    assert ok


def test_c10_critical_future_time(criterion):
    t0, res = cf.critical_future_time(sc.baseline_s0())
    sweep = [cf.critical_time_from(i, 0.5)[0] for i in (0.1, 0.2, 0.3, 0.4, 0.5)]
    decreasing = all(a > b for a, b in zip(sweep, sweep[1:]))
    ok = abs(t0 - ref.CRITICAL_T0) < 1e-8 and round(t0, 3) == 4.503 and abs(res) < 1e-10 and decreasing
    criterion(10, ok, f"T0*={t0:.10f} (oracle {ref.CRITICAL_T0:.10f}) residual={res:.1e} (<1e-10); "
                      f"sweep strictly decreasing={decreasing}")
    assert ok


def test_c11_bridge_statistics(criterion):
    rho = -0.5
    s = sc.with_insider(sc.baseline_s0(rho=rho), source="Wbar", T0=2.0)
    vs = sc.validate(s)
    cfg = SimConfig(n_paths=100_000, dt=1e-3, checkpoints=2)
    null = constant_pair(mode="null")
    b = evolve(simulate_drivers(vs, cfg, horizon=vs.T), null, None)
    wbar = rho * b.checkpoint("w1")[-1] + math.sqrt(1 - rho ** 2) * b.checkpoint("w2")[-1]
    m, m_se = mean_se(wbar)
    v, v_se = mean_se(wbar ** 2 - m ** 2)
    law_ok = abs(m) <= 3 * m_se and abs(v - vs.T) <= 3 * v_se
    b2 = evolve(simulate_drivers(vs, cfg, horizon=2.0), null, None)
    wbar_T0 = rho * b2.checkpoint("w1")[-1] + math.sqrt(1 - rho ** 2) * b2.checkpoint("w2")[-1]
    strong = float(np.sqrt(np.mean((wbar_T0 - b2.y0()) ** 2)))
    ok = law_ok and strong < 0.05
    criterion(11, ok, f"Wbar_T mean={m:+.4f} ({m / m_se:+.2f}se) var={v:.4f} ({(v - vs.T) / v_se:+.2f}se); "
                      f"RMS(Wbar_T0 - Y0)={strong:.4f} (<0.05)")
    assert ok
