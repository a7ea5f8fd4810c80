"""Numerical BSDEs: the small insurer's linear wealth BSDE and the large
insurer's quadratic log-value BSDE.

The quadratic solver runs backward Euler with least-squares regression of
martingale increments on a cubic polynomial basis of the Markov state.
Increments are regenerated per step from a counter-keyed generator, and the
state is rebuilt backward, so memory stays proportional to the path count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .closedform import AffineControl, StrategyPair, ZERO, describe_mode
from .enlargement import drift_for
from .errors import (ModeMismatch, NestedMCBudgetExceeded, RegressionIllConditioned,
                     ShootingDiverged, SingularConfiguration)
from .scenario import ValidatedScenario, validate
from .simulate import SimConfig

MAX_CONDITION = 1e12
MAX_SHOOTING = 30
N_BINS = 32
Y0_KEY = 2 ** 31 - 1


def _v(s):
    return s if isinstance(s, ValidatedScenario) else validate(s)


@dataclass
class BsdeSolution:
    """Per-step summaries of (L, z) and recovered controls, plus diagnostics.

    ``controls_base``/``controls_slope`` hold per-step least-squares fits of
    each control (pi, kappa, theta1, theta2) against the insider state; the
    slope is zero without an insider.
    """

    grid: np.ndarray
    y_mean: np.ndarray
    z_mean: np.ndarray
    terminal_constant: float | np.ndarray
    value: float
    diagnostics: dict
    controls_mean: np.ndarray | None = None
    controls_base: np.ndarray | None = None
    controls_slope: np.ndarray | None = None
    y0_edges: np.ndarray | None = None
    paths: dict = field(default_factory=dict, repr=False)

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "y_mean", "z1_mean", "z2_mean", "pi_mean", "kappa_mean"])
            for k, t in enumerate(self.grid):
                kk = min(k, self.controls_mean.shape[1] - 1)
                wr.writerow([repr(float(t)), repr(float(self.y_mean[k])),
                             repr(float(self.z_mean[0, kk])), repr(float(self.z_mean[1, kk])),
                             repr(float(self.controls_mean[0, kk])),
                             repr(float(self.controls_mean[1, kk]))])

    def diagnostics_text(self):
        lines = [f"{k} = {v}" for k, v in self.diagnostics.items()]
        lines.append(f"value = {self.value!r}")
        tc = self.terminal_constant
        if np.ndim(tc):
            lines.append(f"terminal_constant_bins = {len(tc)}")
        else:
            lines.append(f"terminal_constant = {float(tc)!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- helpers

def _step_rng(seed, k):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))


def _increments(seed, k, n, dt):
    return _step_rng(seed, k).standard_normal((2, n)) * math.sqrt(dt)


def _basis(coords):
    """Total-degree <= 3 monomials of standardised coordinates; degenerate ones dropped."""
    cols = []
    for c in coords:
        sd = float(np.std(c))
        if sd > 1e-12:
            cols.append((c - float(np.mean(c))) / sd)
    n = coords[0].size
    one = np.ones(n)
    if not cols:
        return one[None, :]
    if len(cols) == 1:
        x = cols[0]
        return np.stack([one, x, x * x, x * x * x])
    x, y = cols[:2]
    return np.stack([one, x, y, x * x, x * y, y * y, x ** 3, x * x * y, x * y * y, y ** 3])


def _regress(basis, targets, use=None):
    """Least-squares fitted values for each target row; returns (fits, condition)."""
    xtx, _ = K.gram(basis, targets[0], use=use)
    xty = basis @ targets.T
    cond = float(np.linalg.cond(xtx))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RegressionIllConditioned(f"normal equations condition number {cond:.3e}")
    coef = np.linalg.solve(xtx, xty)
    return coef.T @ basis, cond


class _Model:
    """Per-step coefficients of the continuous game in H-coordinates."""

    def __init__(self, vs, grid):
        m, i = vs.market, vs.insurance
        self.rho = i.rho
        self.srho = math.sqrt(1 - i.rho ** 2)
        self.r = m.r(grid) * np.ones_like(grid)
        self.mu0 = m.mu0(grid) * np.ones_like(grid)
        self.varrho = m.varrho(grid) * np.ones_like(grid)
        self.sigma = m.sigma(grid) * np.ones_like(grid)
        self.sigma_t = vs.sigma_tilde(grid) * np.ones_like(grid)
        self.b = i.b(grid) * np.ones_like(grid)
        self.prem = (i.lambda_premium(grid) - i.a(grid)) * np.ones_like(grid)
        self.iota = vs.iota(grid) * np.ones_like(grid)
        self.c = vs.c(grid) * np.ones_like(grid)
        self.D = self.sigma + self.sigma_t - 2 * self.rho ** 2 * self.sigma
        self.drift = drift_for(vs.insider, i.rho)
        ind = vs.insider
        if ind.kind == "brownian":
            self.kernel = ind.kernel(grid) * np.ones_like(grid)
            self.gain = self.drift.gain(grid) * np.ones_like(grid)
        else:
            self.kernel = np.zeros_like(grid)
            self.gain = np.zeros_like(grid)

    def phi(self, k, state):
        g = self.gain[k] * state
        return self.drift.w1 * g, self.drift.w2 * g

    def tilde(self, k, state):
        p1, p2 = self.phi(k, state)
        return self.iota[k] + p1, self.c[k] - p2

    def f_q(self, k, z1, z2, state):
        """Quadratic generator of the robust log-value BSDE."""
        f1, f2 = self.tilde(k, state)
        rho, srho, D = self.rho, self.srho, self.D[k]
        sq = (1 - rho ** 2) * (z1 + f1) - rho * srho * (z2 - f2)
        return ((z1 * z1 + z2 * z2) / 4 - f1 * z1 / 2 + f2 * z2 / 2 - self.r[k]
                - (f1 * f1 + f2 * f2) / 4
                - (self.sigma[k] - self.sigma_t[k]) / (4 * (1 - rho ** 2) * D) * sq * sq)

    def robust_controls(self, k, z1, z2, state):
        """(pi, kappa, theta1, theta2) from z via the linear recovery maps."""
        f1, f2 = self.tilde(k, state)
        rho, srho = self.rho, self.srho
        s, st, b, D = self.sigma[k], self.sigma_t[k], self.b[k], self.D[k]
        a1, a2 = z1 + f1, z2 - f2
        pi = (1 - rho ** 2) / D * a1 - rho * srho / D * a2
        kappa = -srho * (s + st) / (2 * D * b) * a2 + rho * (s - st) / (2 * D * b) * a1
        th1 = ((2 * st - rho ** 2 * s - rho ** 2 * st) / (2 * D) * z1
               - (2 * s - 3 * rho ** 2 * s + rho ** 2 * st) / (2 * D) * f1
               + rho * srho * (s - st) / (2 * D) * a2)
        th2 = ((s + st - 3 * rho ** 2 * s + rho ** 2 * st) / (2 * D) * z2
               + (1 - rho ** 2) * (s + st) / (2 * D) * f2
               + rho * srho * (s - st) / (2 * D) * a1)
        return pi, kappa, th1, th2

    def neutral_controls_from_z(self, k, z1, z2):
        """Invert z = (sigma pi - rho b kappa, -srho b kappa) with the generator off."""
        kappa = -z2 / (self.srho * self.b[k])
        pi = (z1 + self.rho * self.b[k] * kappa) / self.sigma[k]
        return pi, kappa

    def neutral_maximiser(self, k, state):
        """Pointwise maximiser of the log-wealth drift by a 2x2 linear solve."""
        p1, p2 = self.phi(k, state)
        s, b, rho = self.sigma[k], self.b[k], self.rho
        hess = np.array([[2 * self.varrho[k] - s * s, rho * s * b], [rho * s * b, -b * b]])
        g_pi = self.mu0[k] - self.r[k] + s * p1
        g_ka = self.prem[k] - rho * b * p1 - self.srho * b * p2
        sol = np.linalg.solve(hess, -np.stack([np.broadcast_to(g_pi, np.shape(p1)),
                                               np.broadcast_to(g_ka, np.shape(p1))]))
        return sol[0], sol[1]

    def log_drift(self, k, pi, kappa, state):
        p1, p2 = self.phi(k, state)
        s, b, rho = self.sigma[k], self.b[k], self.rho
        return (self.r[k] + (self.mu0[k] + self.varrho[k] * pi - self.r[k]) * pi
                + self.prem[k] * kappa - 0.5 * (s * s * pi * pi - 2 * rho * s * b * pi * kappa
                                                + b * b * kappa * kappa)
                + (s * pi - rho * b * kappa) * p1 - self.srho * b * kappa * p2)


def _state_step(model, k, state, dw, dt):
    """Forward Euler for the insider state S (unchanged without an insider)."""
    if model.kernel[k] == 0.0:
        return state
    src = model.drift.w1 * dw[0] + model.drift.w2 * dw[1]
    return state - model.kernel[k] * (src + model.gain[k] * state * dt)


def _state_back(model, k, state_next, dw, dt):
    """Invert ``_state_step``."""
    if model.kernel[k] == 0.0:
        return state_next
    src = model.drift.w1 * dw[0] + model.drift.w2 * dw[1]
    return (state_next + model.kernel[k] * src) / (1.0 - model.kernel[k] * model.gain[k] * dt)


# ---------------------------------------------------------------- quadratic BSDE

def _bisect(target, offset, lo, hi, tol):
    """Find c with c + offset = target by bisection; returns (c, iterations)."""
    g = lambda c: c + offset - target  # noqa: E731
    if not (g(lo) < 0 < g(hi)):
        raise ShootingDiverged(f"terminal constant not bracketed in [{lo:g}, {hi:g}]")
    for it in range(1, MAX_SHOOTING + 1):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) < tol:
            return mid, it
        if gm < 0:
            lo = mid
        else:
            hi = mid
    raise ShootingDiverged(f"no convergence in {MAX_SHOOTING} bisection steps")


def quadratic_bsde_solve(s, cfg: SimConfig | None = None, shooting=1e-3, n_steps=None,
                         neutral=None, bins=N_BINS, keep_paths=False) -> BsdeSolution:
    """Solve the log-value BSDE by backward regression and shoot on the terminal constant.

    With the ambiguity switched off (or ``neutral=True``) the generator is
    clamped to zero: wealth is simulated forward under the pointwise drift
    maximiser and ``L = ln X`` is regressed backward from ``ln X_T``.
    """
    vs = _v(s)
    if vs.is_jump:
        raise ModeMismatch("quadratic BSDE covers the continuous case only", describe_mode(vs))
    if vs.insider.kind not in (None, "brownian"):
        raise ModeMismatch("quadratic BSDE needs a Brownian or no insider", describe_mode(vs))
    neutral = (not vs.ambiguity.enabled) if neutral is None else neutral
    cfg = cfg or SimConfig(n_paths=200_000, dt=vs.T / 500)
    N = n_steps or int(round(vs.T / cfg.dt))
    dt = vs.T / N
    n = cfg.n_paths
    grid = dt * np.arange(N + 1)
    model = _Model(vs, grid)
    if np.any(np.abs(model.D) < 1e-14):
        raise SingularConfiguration("sigma + sigma_tilde - 2 rho^2 sigma vanishes")
    seed = cfg.seed
    lnx0 = math.log(vs.X0)
    has_insider = vs.insider.kind == "brownian"

    # forward pass: terminal state (and ln X_T in neutral mode)
    if has_insider:
        ind = vs.insider
        y0 = _step_rng(seed, Y0_KEY).standard_normal(n) * math.sqrt(ind.norm2(0.0, ind.T0))
        if ind.realized_value is not None:
            y0[:] = ind.realized_value
    else:
        y0 = np.zeros(n)
    state = y0.copy()
    w = np.zeros((2, n))
    lnx = np.full(n, lnx0)
    for k in range(N):
        dw = _increments(seed, k, n, dt)
        if neutral:
            pi, ka = model.neutral_maximiser(k, state)
            p1, p2 = model.phi(k, state)
            lnx = (lnx + model.log_drift(k, pi, ka, state) * dt
                   + (model.sigma[k] * pi - model.rho * model.b[k] * ka) * dw[0]
                   - model.srho * model.b[k] * ka * dw[1])
        state = _state_step(model, k, state, dw, dt)
        w += dw

    # backward sweep with zero terminal value (robust) or ln X_T (neutral)
    y = (lnx - lnx0) if neutral else np.zeros(n)
    y_mean = np.empty(N + 1)
    y_mean[N] = float(np.mean(y))
    z_mean = np.empty((2, N))
    ctl_mean = np.empty((4, N))
    ctl_base = np.zeros((4, N))
    ctl_slope = np.zeros((4, N))
    max_cond = 1.0
    for k in range(N - 1, -1, -1):
        dw = _increments(seed, k, n, dt)
        state = _state_back(model, k, state, dw, dt)
        w -= dw
        coords = (state, y0 - state) if has_insider else (w[0], w[1])
        basis = _basis(coords)
        (cond_y,), cond = _regress(basis, y[None, :], use=cfg.backend)
        # centring on the conditional mean leaves only the martingale part in the target
        resid = y - cond_y
        (z1, z2), _ = _regress(basis, np.stack([resid * dw[0] / dt, resid * dw[1] / dt]),
                               use=cfg.backend)
        max_cond = max(max_cond, cond)
        if neutral:
            pi, ka = model.neutral_controls_from_z(k, z1, z2)
            drift = model.log_drift(k, pi, ka, state)
            y = cond_y - drift * dt
            controls = (pi, ka, np.zeros(n), np.zeros(n))
        else:
            y = cond_y + model.f_q(k, z1, z2, state) * dt
            controls = model.robust_controls(k, z1, z2, state)
        y_mean[k] = float(np.mean(y))
        z_mean[:, k] = (float(np.mean(z1)), float(np.mean(z2)))
        for j, c in enumerate(controls):
            c = np.broadcast_to(c, (n,))
            ctl_mean[j, k] = float(np.mean(c))
            if has_insider and np.std(state) > 1e-12:
                slope, base = np.polyfit(state, c, 1)
                ctl_base[j, k], ctl_slope[j, k] = base, slope
            else:
                ctl_base[j, k] = ctl_mean[j, k]

    diag = {"mode": "neutral" if neutral else "robust", "n_paths": n, "n_steps": N,
            "max_condition_number": f"{max_cond:.3e}", "backend": K.backend()
            if cfg.backend is None else cfg.backend}
    if neutral:
        # L = ln X: the initial value is ln X0 up to regression error
        y_mean = y_mean + lnx0
        value = float(np.mean(lnx))
        diag.update(shooting_iterations=0, residual_t0=f"{abs(y_mean[0] - lnx0):.3e}")
        return BsdeSolution(grid, y_mean, z_mean, value, value, diag, ctl_mean, ctl_base, ctl_slope,
                            paths={"y0": y0, "L0": y + lnx0} if keep_paths else {})

    # shooting: L_0 = c + Ltilde_0, one scalar or one per Y0-quantile bin
    if has_insider:
        edges = np.quantile(y0, np.linspace(0, 1, bins + 1))
        idx = np.clip(np.searchsorted(edges, y0, side="right") - 1, 0, bins - 1)
    else:
        edges = None
        idx = np.zeros(n, dtype=int)
        bins = 1
    consts = np.empty(bins)
    iters = 0
    resid = 0.0
    for bi in range(bins):
        mask = idx == bi
        if not mask.any():
            raise ShootingDiverged(f"empty Y0 bin {bi}")
        off = float(np.mean(y[mask]))
        if not math.isfinite(off):
            raise ShootingDiverged("non-finite initial value")
        c, it = _bisect(lnx0, off, lnx0 - 64.0, lnx0 + 64.0, shooting)
        consts[bi] = c
        iters = max(iters, it)
        resid = max(resid, abs(c + off - lnx0))
    per_path = consts[idx]
    value = float(np.mean(per_path))
    y_mean = y_mean + value
    diag.update(shooting_iterations=iters, residual_t0=f"{resid:.3e}", bins=bins)
    tc = consts if has_insider else float(consts[0])
    return BsdeSolution(grid, y_mean, z_mean, tc, value, diag, ctl_mean, ctl_base, ctl_slope, edges,
                        paths={"y0": y0, "L0": y + per_path} if keep_paths else {})


def recover_strategies(sol: BsdeSolution, s) -> StrategyPair:
    """Piecewise-constant affine controls from the per-step fits of a solution."""
    vs = _v(s)
    D = vs.market.sigma(0.0) + vs.sigma_tilde(0.0) - 2 * vs.insurance.rho ** 2 * vs.market.sigma(0.0)
    if abs(D) < 1e-14:
        raise SingularConfiguration("sigma + sigma_tilde - 2 rho^2 sigma vanishes")
    grid = sol.grid
    dt = grid[1] - grid[0]
    last = sol.controls_base.shape[1] - 1

    def lookup(arr):
        def f(t):
            k = np.clip(np.floor(np.asarray(t, dtype=float) / dt + 1e-9).astype(int), 0, last)
            return arr[k]
        return f

    ctl = [AffineControl(lookup(sol.controls_base[j]), lookup(sol.controls_slope[j])) for j in range(4)]
    return StrategyPair(ctl[0], ctl[1], (ctl[2], ctl[3], ZERO, ZERO),
                        "bsde_" + sol.diagnostics["mode"],
                        "none" if vs.insider.kind is None else vs.insider.source)


def recover_from_z(s, t, z1, z2, state=0.0, neutral=False):
    """Pointwise maps from z (and the information drift at state) to controls."""
    vs = _v(s)
    grid = np.atleast_1d(np.asarray(t, dtype=float))
    model = _Model(vs, grid)
    if np.any(np.abs(model.D) < 1e-14):
        raise SingularConfiguration("sigma + sigma_tilde - 2 rho^2 sigma vanishes")
    if neutral:
        return model.neutral_controls_from_z(0, z1, z2)
    return model.robust_controls(0, z1, z2, state)


# ---------------------------------------------------------------- linear BSDE

def _sqrt_pi_moments(vs, a, b):
    """(int r, int |phi~|^2) over [a, b] for the public information drift."""
    rate = vs.integral(vs.market.r, a, b)
    sq = vs.integral(lambda t: vs.iota(t) ** 2 + vs.c(t) ** 2, a, b)
    return rate, sq


def linear_bsde_wealth(s, cfg: SimConfig | None = None, n_inner=4000, budget=5e9,
                       query=None) -> BsdeSolution:
    """Optimal robust wealth X*_t = X0 E[sqrt Pi(t,T) | H_t] / (E[sqrt Pi(0,T) | H_0] sqrt Pi(0,t)).

    Without an insider the conditional expectations are deterministic and
    closed. With an insider they are estimated by nested Monte Carlo on the
    H-coordinate dynamics; ``query`` = (t, S) additionally returns the
    controls at that point through ``diagnostics``.
    """
    vs = _v(s)
    if vs.is_jump or vs.is_large or not vs.ambiguity.enabled:
        raise ModeMismatch("linear wealth BSDE needs the continuous small robust case",
                           describe_mode(vs))
    cfg = cfg or SimConfig.from_scenario(vs, n_paths=10_000)
    N = int(round(vs.T / cfg.dt))
    dt = vs.T / N
    grid = dt * np.arange(N + 1)
    lnx0 = math.log(vs.X0)
    if vs.insider.kind is None:
        return _linear_public(vs, cfg, grid, lnx0)
    cost = float(cfg.n_paths) * n_inner * N
    if query is None and cost > budget:
        raise NestedMCBudgetExceeded(f"{cost:.3e} inner path-steps exceed budget {budget:.3e}")
    return _linear_insider(vs, cfg, grid, lnx0, n_inner, budget, query)


def _linear_public(vs, cfg, grid, lnx0):
    n = cfg.n_paths
    N = grid.size - 1
    dt = grid[1] - grid[0]
    rate_T, sq_T = _sqrt_pi_moments(vs, 0.0, vs.T)
    log_e0 = -0.5 * rate_T - sq_T / 8
    model = _Model(vs, grid)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(0,))))
    # ln sqrt Pi(0,t) = -1/2 int r - 1/2 int phi~ . dW - 1/4 int |phi~|^2, phi~ = (iota, -c)
    log_sqrt = np.zeros(n)
    y_mean = np.empty(N + 1)
    lnx_T = None
    for k in range(N + 1):
        t = grid[k]
        rate_t, sq_t = _sqrt_pi_moments(vs, t, vs.T) if k < N else (0.0, 0.0)
        log_cond = -0.5 * rate_t - sq_t / 8
        lnx = lnx0 + log_cond - log_e0 - log_sqrt
        y_mean[k] = float(np.mean(np.exp(lnx)))
        if k == N:
            lnx_T = lnx
            break
        dw = rng.standard_normal((2, n)) * math.sqrt(dt)
        log_sqrt += (-0.5 * model.r[k] * dt - 0.5 * (model.iota[k] * dw[0] - model.c[k] * dw[1])
                     - 0.25 * (model.iota[k] ** 2 + model.c[k] ** 2) * dt)
    z_over_x = np.stack([0.5 * model.iota[:-1], -0.5 * model.c[:-1]])
    pi = z_over_x[0] / model.sigma[:-1] - model.rho * z_over_x[1] / (model.srho * model.sigma[:-1])
    kappa = -z_over_x[1] / (model.srho * model.b[:-1])
    controls = np.stack([pi, kappa, -0.5 * model.iota[:-1], 0.5 * model.c[:-1]])
    value = lnx0 - 2.0 * log_e0
    diag = {"mode": "linear_closed", "n_paths": cfg.n_paths, "n_steps": N,
            "x0_reproduced": repr(float(math.exp(lnx0 + (-0.5 * rate_T - sq_T / 8) - log_e0))),
            "mean_ln_x_T": repr(float(np.mean(lnx_T)))}
    return BsdeSolution(grid, y_mean, z_over_x, value, value, diag, controls, controls,
                        np.zeros_like(controls), paths={"ln_x_T": lnx_T})


def _inner_log_sqrt_pi(vs, model, k0, state, n_inner, rng, dt):
    """Samples of ln sqrt Pi(t_k0, T) given the insider state, on H-coordinates."""
    N = model.r.size - 1
    st = np.full(n_inner, float(state))
    acc = np.zeros(n_inner)
    for k in range(k0, N):
        dw = rng.standard_normal((2, n_inner)) * math.sqrt(dt)
        f1, f2 = model.tilde(k, st)
        acc += (-0.5 * model.r[k] * dt - 0.5 * (f1 * dw[0] - f2 * dw[1]) - 0.25 * (f1 * f1 + f2 * f2) * dt)
        st = _state_step(model, k, st, dw, dt)
    return acc


def _cond_log_e(vs, model, k, state, n_inner, seed, dt):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k, 1))))
    a = _inner_log_sqrt_pi(vs, model, k, state, n_inner, rng, dt)
    m = a.max()
    return m + math.log(np.mean(np.exp(a - m)))


def _linear_insider(vs, cfg, grid, lnx0, n_inner, budget, query):
    """Nested Monte Carlo for the insider case.

    Without ``query`` a small outer sample of X*_t along paths is produced.
    With ``query=(t, S)`` the controls at that point are estimated from the
    volatility of ln X*, using a central difference in S with common inner draws.
    """
    model = _Model(vs, grid)
    N = grid.size - 1
    dt = grid[1] - grid[0]
    diag = {"mode": "linear_nested", "n_inner": n_inner, "n_steps": N}
    if query is not None:
        t, S = query
        k = int(round(t / dt))
        cost = 3.0 * n_inner * (N - k)
        if cost > budget:
            raise NestedMCBudgetExceeded(f"{cost:.3e} inner path-steps exceed budget {budget:.3e}")
        h = 1e-2
        lp = _cond_log_e(vs, model, k, S + h, n_inner, cfg.seed, dt)
        lm = _cond_log_e(vs, model, k, S - h, n_inner, cfg.seed, dt)
        dlog = (lp - lm) / (2 * h)
        f1, f2 = model.tilde(k, S)
        # d ln X* = ... + (1/2 phi~1 dW1_H - 1/2 phi~2 dW2_H) + dlog dS, dS = -kernel dW_src_H
        v1 = 0.5 * f1 - dlog * model.kernel[k] * model.drift.w1
        v2 = -0.5 * f2 - dlog * model.kernel[k] * model.drift.w2
        kappa = -v2 / (model.srho * model.b[k])
        pi = (v1 + model.rho * model.b[k] * kappa) / model.sigma[k]
        diag.update(query_t=float(t), query_state=float(S), query_pi=float(pi), query_kappa=float(kappa))
        return BsdeSolution(grid, np.array([np.nan]), np.array([[v1], [v2]]), np.nan, np.nan, diag,
                            np.array([[pi], [kappa], [np.nan], [np.nan]]))
    n = cfg.n_paths
    ind = vs.insider
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(0,))))
    y0 = rng.standard_normal(n) * math.sqrt(ind.norm2(0.0, ind.T0))
    ck = np.unique(np.round(np.linspace(0, N, cfg.checkpoints + 1)).astype(int))
    ck = ck[ck < N]
    log_e0 = np.array([_cond_log_e(vs, model, 0, y, n_inner, cfg.seed, dt) for y in y0])
    state = y0.copy()
    log_sqrt = np.zeros(n)
    xs = np.empty((ck.size, n))
    ci = 0
    for k in range(N):
        if ci < ck.size and ck[ci] == k:
            cond = np.array([_cond_log_e(vs, model, k, sj, n_inner, cfg.seed, dt) for sj in state])
            xs[ci] = np.exp(lnx0 + cond - log_e0 - log_sqrt)
            ci += 1
        dw = rng.standard_normal((2, n)) * math.sqrt(dt)
        f1, f2 = model.tilde(k, state)
        log_sqrt += (-0.5 * model.r[k] * dt - 0.5 * (f1 * dw[0] - f2 * dw[1])
                     - 0.25 * (f1 * f1 + f2 * f2) * dt)
        state = _state_step(model, k, state, dw, dt)
    value = float(np.mean(lnx0 - 2.0 * log_e0))
    diag["outer_paths"] = n
    # z and the controls are only estimated pointwise through ``query``
    return BsdeSolution(grid[ck], xs.mean(axis=1), np.full((2, ck.size), np.nan), lnx0 - 2.0 * log_e0,
                        value, diag, np.full((4, ck.size), np.nan), paths={"x": xs, "y0": y0})


def strategy_error(sol: BsdeSolution, reference: StrategyPair):
    """Mean absolute gap of per-step (base, slope) fits to a reference pair, over the four controls."""
    ref_base, ref_slope = reference.coefficients(sol.grid[:-1])
    return float(np.mean(np.abs(sol.controls_base - ref_base[:4]))
                 + np.mean(np.abs(sol.controls_slope - ref_slope[:4])))


def convergence_study(s, reference: StrategyPair, levels, seed=20240607, shooting=1e-3):
    """Solve at each (n_paths, n_steps) level; return rows and successive empirical rates."""
    vs = _v(s)
    rows = []
    for n, N in levels:
        sol = quadratic_bsde_solve(vs, SimConfig(n_paths=n, dt=vs.T / N, seed=seed), shooting)
        rows.append((n, N, strategy_error(sol, reference), sol.value))
    rates = [math.log2(a[2] / b[2]) if b[2] > 0 else math.inf for a, b in zip(rows, rows[1:])]
    return rows, rates
