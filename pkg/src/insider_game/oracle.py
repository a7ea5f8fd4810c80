"""Brute-force checks that never consult the closed forms.

* ``saddle_search``: sup-inf / inf-sup over a grid of constant controls,
  scored on one shared sample of drivers.
* ``gateaux_check``: central finite differences of J with common random numbers.
* ``martingale_suite``: mean-one and submartingale checks on the density.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .closedform import AffineControl, StrategyPair, ZERO, constant, constant_pair
from .errors import GridTooCoarse, ModeMismatch
from .scenario import ValidatedScenario, validate
from .simulate import SimConfig, evolve, evolve_many, mean_se, simulate_drivers

CONTROL_INDEX = {"pi": 0, "kappa": 1, "theta1": 2, "theta2": 3, "theta3": 4, "theta4": 5}


def _axis(lo, hi, step):
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


@dataclass
class SaddleGrid:
    pi_range: tuple = (0.0, 2.0, 0.125)
    kappa_range: tuple = (0.0, 2.0, 0.125)
    theta1_range: tuple = (-1.0, 1.0, 0.125)
    theta2_range: tuple = (-1.0, 1.0, 0.125)
    theta4_range: tuple = (-1.0, 1.0, 0.125)
    values: np.ndarray | None = None
    stderr: np.ndarray | None = None

    def axes(self, jump):
        second = self.theta4_range if jump else self.theta2_range
        return (_axis(*self.pi_range), _axis(*self.kappa_range),
                _axis(*self.theta1_range), _axis(*second))


@dataclass
class SaddleResult:
    u_hat: tuple
    v_hat: tuple
    J_hat: float
    J_hat_se: float
    minmax: float
    minmax_se: float
    minmax_u: tuple
    minmax_v: tuple
    gap_se: float
    second_generator: str
    grid: SaddleGrid = field(repr=False)
    n_paths: int = 0

    def __iter__(self):
        return iter((self.u_hat, self.v_hat, self.J_hat))

    @property
    def value_gap(self):
        return self.minmax - self.J_hat

    def gap_to(self, u_ref, v_ref):
        du = max(abs(a - b) for a, b in zip(self.u_hat, u_ref))
        dv = max(abs(a - b) for a, b in zip(self.v_hat, v_ref))
        return du, dv

    def write_csv(self, path, u_axes, v_axes):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["pi", "kappa", "theta1", self.second_generator, "J"])
            for iu, (p, k) in enumerate(u_axes):
                for iv, (a, b) in enumerate(v_axes):
                    val = self.grid.values[iu, iv]
                    if np.isfinite(val):
                        wr.writerow([repr(p), repr(k), repr(a), repr(b), repr(float(val))])


def _model_terms(vs, pi, kappa):
    """Exact ln X_T of constant controls: (drift*T, coefficient on W1_T, on W2_T, on N_T)."""
    m, i = vs.market, vs.insurance
    r, mu0, vr, sig = (float(m.r(0.0)), float(m.mu0(0.0)), float(m.varrho(0.0)), float(m.sigma(0.0)))
    a, b, lam = float(i.a(0.0)), float(i.b(0.0)), float(i.lambda_premium(0.0))
    rho = i.rho
    srho = math.sqrt(1 - rho * rho)
    drift = (r + (mu0 + vr * pi - r) * pi + (lam - a) * kappa - 0.5 * sig * sig * pi * pi
             + rho * sig * b * pi * kappa - 0.5 * b * b * kappa * kappa)
    jump_coef = np.zeros_like(pi)
    if vs.is_jump:
        g2 = float(i.jump2.gamma(0.0))
        lamb = i.jump2.intensity
        drift = drift + kappa * g2 * lamb
        with np.errstate(divide="ignore", invalid="ignore"):
            jump_coef = np.where(kappa * g2 < 1, np.log(np.clip(1 - kappa * g2, 1e-300, None)), np.nan)
    return drift * vs.T, sig * pi - rho * b * kappa, -srho * b * kappa, jump_coef


def _log_density(vs, th1, th_b, w1, w2, n, t):
    if vs.is_jump:
        lamb = vs.insurance.jump2.intensity
        return th1 * w1 - 0.5 * th1 * th1 * t + n * math.log1p(th_b) - th_b * lamb * t
    return th1 * w1 + th_b * w2 - 0.5 * (th1 * th1 + th_b * th_b) * t


def _penalty(vs, th1, th_b):
    if vs.is_jump:
        lamb = vs.insurance.jump2.intensity
        return 0.5 * th1 * th1 + lamb * ((1 + th_b) * math.log1p(th_b) - th_b)
    return 0.5 * (th1 * th1 + th_b * th_b)


def saddle_search(s, grid: SaddleGrid | None = None, cfg: SimConfig | None = None,
                  check_boundary=True, n_checkpoints=20) -> SaddleResult:
    """Discrete sup-inf over constant (pi, kappa) against constant generators.

    Every cell is scored on the same driver sample. For constant controls and
    parameters, ln X_T and ln eps_t are affine in (W1_T, W2_T, N_T), so each
    cell's J is assembled exactly from per-generator sample moments.
    """
    vs = s if isinstance(s, ValidatedScenario) else validate(s)
    if vs.has_insider or not vs.constant_params:
        raise ModeMismatch("saddle search needs constant parameters and no insider",
                           "closed-form dispatch via solve")
    grid = grid or SaddleGrid()
    cfg = cfg or SimConfig.from_scenario(vs)
    bundle = evolve(simulate_drivers(vs, cfg.replace(checkpoints=n_checkpoints)),
                    constant_pair(mode="null"), (ZERO,) * 4)
    t = bundle.ck_times[:, None]
    w1, w2, nj = bundle.checkpoint("w1"), bundle.checkpoint("w2"), bundle.checkpoint("jumps")
    # trapezoid weights over the checkpoint times
    trap = (np.diff(bundle.ck_times, prepend=0.0)[:, None] + np.diff(bundle.ck_times, append=vs.T)[:, None]) / 2

    pis, kappas, th1s, thbs = grid.axes(vs.is_jump)
    if not vs.ambiguity.enabled:
        th1s, thbs = np.array([0.0]), np.array([0.0])
    if not vs.is_jump and vs.insurance.b(0.0) == 0.0:
        kappas = np.array([0.0])
    P, Kp = np.meshgrid(pis, kappas, indexing="ij")
    P, Kp = P.ravel(), Kp.ravel()
    drift_T, beta1, beta2, jump_coef = _model_terms(vs, P, Kp)
    u_ok = np.isfinite(jump_coef)
    lnx0 = math.log(vs.X0)

    A1, B1 = np.meshgrid(th1s, thbs, indexing="ij")
    A1, B1 = A1.ravel(), B1.ravel()
    v_ok = B1 > -1 if vs.is_jump else np.ones(A1.size, bool)
    moments = np.full((5, A1.size), np.nan)
    pen = np.full(A1.size, np.nan)
    for iv in np.flatnonzero(v_ok):
        eps = np.exp(_log_density(vs, A1[iv], B1[iv], w1, w2, nj, t))
        eT = eps[-1]
        moments[:, iv] = (eT.mean(), (eT * w1[-1]).mean(), (eT * w2[-1]).mean(),
                          (eT * nj[-1]).mean(), (trap * eps).sum(axis=0).mean())
        pen[iv] = _penalty(vs, A1[iv], B1[iv])
    coef = np.stack([lnx0 + drift_T, beta1, beta2, np.nan_to_num(jump_coef)], axis=1)
    J = coef @ moments[:4] + pen[None, :] * moments[4][None, :]
    J[~u_ok, :] = np.nan
    J[:, ~v_ok] = np.nan
    grid.values = J

    lo = np.where(np.isnan(J), np.inf, J)
    hi = np.where(np.isnan(J), -np.inf, J)
    inner_min = lo.min(axis=1)
    inner_min[~u_ok] = -np.inf
    iu = int(np.argmax(inner_min))
    iv = int(np.argmin(lo[iu]))
    inner_max = hi.max(axis=0)
    inner_max[~v_ok] = np.inf
    jv = int(np.argmin(inner_max))
    ju = int(np.argmax(hi[:, jv]))

    def per_path(cu, cv):
        eps = np.exp(_log_density(vs, A1[cv], B1[cv], w1, w2, nj, t))
        c = coef[cu]
        lnx = c[0] + c[1] * w1[-1] + c[2] * w2[-1] + c[3] * nj[-1]
        return eps[-1] * lnx + pen[cv] * (trap * eps).sum(axis=0)

    a, b = per_path(iu, iv), per_path(ju, jv)
    m1, se1 = mean_se(a, cfg.antithetic)
    m2, se2 = mean_se(b, cfg.antithetic)
    _, gap_se = mean_se(b - a, cfg.antithetic)
    res = SaddleResult((float(P[iu]), float(Kp[iu])), (float(A1[iv]), float(B1[iv])), m1, se1,
                       m2, se2, (float(P[ju]), float(Kp[ju])), (float(A1[jv]), float(B1[jv])),
                       gap_se, "theta4" if vs.is_jump else "theta2", grid, cfg.n_paths)
    if check_boundary:
        _boundary(res, pis, kappas, th1s, thbs, A1, B1, v_ok, vs)
    return res


def _boundary(res, pis, kappas, th1s, thbs, A1, B1, v_ok, vs):
    def edge(x, axis, lo_edge=None):
        if axis.size <= 1:
            return False
        lo = axis.min() if lo_edge is None else lo_edge
        return bool(np.isclose(x, lo) or np.isclose(x, axis.max()))

    where = []
    if edge(res.u_hat[0], pis):
        where.append("pi")
    if edge(res.u_hat[1], kappas):
        where.append("kappa")
    if vs.ambiguity.enabled:
        if edge(res.v_hat[0], th1s):
            where.append("theta1")
        lo_b = B1[v_ok].min() if v_ok.any() else None
        if edge(res.v_hat[1], thbs, lo_b):
            where.append(res.second_generator)
    if where:
        raise GridTooCoarse(f"discrete saddle on the grid boundary in {', '.join(where)}: "
                            f"u={res.u_hat}, v={res.v_hat}")


def _bumped(control: AffineControl, h, window):
    if window is None:
        return AffineControl(lambda t: control.base(t) + h, control.slope)
    lo, hi = window

    def base(t):
        t_arr = np.asarray(t, dtype=float)
        return control.base(t) + h * ((t_arr > lo) & (t_arr <= hi))

    return AffineControl(base, control.slope)


def _apply(u, v, direction, h):
    """Shift u and v by h*direction; ``direction`` maps control names to weights.

    A ``window`` entry (t0, t1) restricts the bump to the interval (t0, t1].
    """
    window = direction.get("window")
    ctl = list(u.controls[:2]) + list(v.theta if isinstance(v, StrategyPair) else v)
    for name, w in direction.items():
        if name == "window":
            continue
        i = CONTROL_INDEX[name]
        ctl[i] = _bumped(ctl[i], h * w, window)
    return StrategyPair(ctl[0], ctl[1], tuple(ctl[2:]), u.mode, u.state_kind), tuple(ctl[2:])


def gateaux_check(s, u: StrategyPair, v, direction, cfg: SimConfig | None = None, h=1e-3):
    """Central difference (J(+h) - J(-h)) / 2h along ``direction``: (estimate, stderr).

    With common random numbers both sides share drivers and the difference
    is taken path by path; otherwise the minus side uses an independent seed.
    """
    vs = s if isinstance(s, ValidatedScenario) else validate(s)
    cfg = cfg or SimConfig.from_scenario(vs)
    v = v if v is not None else u.theta
    up_u, up_v = _apply(u, v, direction, h)
    dn_u, dn_v = _apply(u, v, direction, -h)
    if cfg.common_random_numbers:
        bundle = simulate_drivers(vs, cfg)
        plus, minus = evolve_many(bundle, [(up_u, up_v), (dn_u, dn_v)])
        return mean_se((plus.j_samples() - minus.j_samples()) / (2 * h), cfg.antithetic)
    plus = evolve(simulate_drivers(vs, cfg), up_u, up_v)
    minus = evolve(simulate_drivers(vs, cfg.replace(seed=cfg.seed + 1)), dn_u, dn_v)
    mp, sp = mean_se(plus.j_samples(), cfg.antithetic)
    mm, sm = mean_se(minus.j_samples(), cfg.antithetic)
    return (mp - mm) / (2 * h), math.hypot(sp, sm) / (2 * h)


@dataclass
class MartingaleReport:
    times: np.ndarray
    means: np.ndarray
    stderr: np.ndarray
    second_moments: np.ndarray
    mean_ok: np.ndarray
    monotone_ok: bool
    high_variance: bool
    effective_sample: float

    @property
    def passed(self):
        return bool(self.mean_ok.all() and self.monotone_ok)

    def lines(self):
        out = []
        for t, m, se, ok in zip(self.times, self.means, self.stderr, self.mean_ok):
            out.append(f"mean_eps t={t:.4f} mean={m:.6f} se={se:.3e} {'PASS' if ok else 'FAIL'}")
        out.append(f"second_moment_nondecreasing {'PASS' if self.monotone_ok else 'FAIL'}")
        if self.high_variance:
            out.append(f"high_variance effective_sample={self.effective_sample:.1f}")
        return out


def martingale_suite(s, v, cfg: SimConfig | None = None, n_checkpoints=10) -> MartingaleReport:
    """E[eps_t] = 1 within 3 s.e. at each checkpoint and E[eps_t^2] nondecreasing."""
    vs = s if isinstance(s, ValidatedScenario) else validate(s)
    cfg = (cfg or SimConfig.from_scenario(vs)).replace(checkpoints=n_checkpoints)
    gen = v.theta if isinstance(v, StrategyPair) else tuple(
        c if isinstance(c, AffineControl) else constant(c) for c in v)
    b = evolve(simulate_drivers(vs, cfg), constant_pair(mode="null"), gen)
    eps = np.exp(b.checkpoint("lneps"))[1:]
    times = b.ck_times[1:]
    stats = [mean_se(e, cfg.antithetic) for e in eps]
    means = np.array([m for m, _ in stats])
    ses = np.array([se for _, se in stats])
    mean_ok = np.abs(means - 1.0) <= 3.0 * ses
    second = np.mean(eps * eps, axis=1)
    monotone = bool(np.all(np.diff(np.concatenate([[1.0], second])) >= 0.0))
    eT = eps[-1]
    ess = float(eT.sum() ** 2 / np.sum(eT * eT)) if np.any(eT) else 0.0
    high = ess < 0.01 * cfg.n_paths
    return MartingaleReport(times, means, ses, second, mean_ok, monotone, high, ess)
