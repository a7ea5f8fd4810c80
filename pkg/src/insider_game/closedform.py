"""Analytic strategies, adversary generators and value functions.

Every strategy component is affine in the insider state ``S`` (see
:mod:`insider_game.enlargement`): ``control(t, S) = base(t) + slope(t) * S``.
This keeps the formulas usable pathwise by the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .enlargement import drift_for
from .errors import ExperimentalFeature, ModeMismatch, NoBracket, SingularConfiguration
from .scenario import ValidatedScenario, validate

CONTROL_NAMES = ("pi", "kappa", "theta1", "theta2", "theta3", "theta4")


def _arr(t):
    return np.asarray(t, dtype=float)


def _zero(t):
    t = _arr(t)
    return np.zeros(t.shape) if t.ndim else 0.0


@dataclass(frozen=True)
class AffineControl:
    base: Callable
    slope: Callable = _zero

    def __call__(self, t, state=0.0):
        return self.base(t) + self.slope(t) * np.asarray(state, dtype=float)


def constant(v):
    v = float(v)

    def f(t):
        t = _arr(t)
        return np.full(t.shape, v) if t.ndim else v

    return AffineControl(f)


ZERO = AffineControl(_zero)


@dataclass(frozen=True)
class StrategyPair:
    """Investment/liability controls plus the adversary generator.

    ``state_kind`` names the insider statistic the slopes multiply
    (``none``, ``Wbar``, ``W1`` or ``eta2``).
    """

    pi: AffineControl
    kappa: AffineControl
    theta: tuple = (ZERO, ZERO, ZERO, ZERO)
    mode: str = ""
    state_kind: str = "none"
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def controls(self):
        return (self.pi, self.kappa, *self.theta)

    def evaluate(self, t, state=0.0):
        return {n: c(t, state) for n, c in zip(CONTROL_NAMES, self.controls)}

    def coefficients(self, grid):
        """Base and slope arrays of shape (6, len(grid))."""
        grid = _arr(grid)
        base = np.empty((6, grid.size))
        slope = np.empty((6, grid.size))
        for i, c in enumerate(self.controls):
            base[i] = np.broadcast_to(c.base(grid), grid.shape)
            slope[i] = np.broadcast_to(c.slope(grid), grid.shape)
        return base, slope

    def neutralised(self):
        """Same investment/liability controls with the adversary switched off."""
        return StrategyPair(self.pi, self.kappa, (ZERO,) * 4, self.mode, self.state_kind,
                            self.extras)

    def with_generator(self, theta):
        return StrategyPair(self.pi, self.kappa, tuple(theta), self.mode, self.state_kind,
                            self.extras)


def constant_pair(pi=0.0, kappa=0.0, theta1=0.0, theta2=0.0, theta3=0.0, theta4=0.0,
                  mode="constant"):
    return StrategyPair(constant(pi), constant(kappa),
                        (constant(theta1), constant(theta2), constant(theta3), constant(theta4)),
                        mode)


@dataclass
class ValueReport:
    analytic: float | None
    components: dict
    mc_estimate: tuple | None = None
    label: str = "V"
    note: str = ""

    def component_sum(self):
        return math.fsum(self.components.values())

    def lines(self):
        out = [f"mode_value={self.label}"]
        if self.analytic is None:
            out.append(f"{self.label}=MC-only")
        else:
            out.append(f"{self.label}={self.analytic!r}")
        for k, v in self.components.items():
            out.append(f"{k}={v!r}")
        if self.mc_estimate is not None:
            mean, se, n = self.mc_estimate
            out.append(f"mc_mean={mean!r}")
            out.append(f"mc_stderr={se!r}")
            out.append(f"mc_paths={n}")
        if self.note:
            out.append(f"note={self.note}")
        return out


def _report(components, label="V", note=""):
    return ValueReport(math.fsum(components.values()), dict(components), None, label, note)


# ---------------------------------------------------------------- mode checks

def describe_mode(vs: ValidatedScenario) -> str:
    """Name of the closed-form operation matching the scenario."""
    amb = vs.ambiguity.enabled
    ind = vs.insider
    if vs.is_jump:
        if ind.kind is None:
            return "jump_robust_no_insider" if amb else "jump_neutral_no_insider"
        return "jump_insider_strategies"
    if vs.is_large:
        return "bsde" if amb else "large_neutral"
    if ind.kind is None:
        return "small_robust_no_insider" if amb else "small_neutral_no_insider"
    if not amb:
        return "small_neutral_insider"
    return "small_robust_insider_insurance" if ind.source == "Wbar" else "small_robust_insider_asset"


def _require(vs, op, *, jump=False, large=None, insider=None, ambiguity=None, source=None,
             unit_kernel=False):
    ok = vs.is_jump == jump
    if large is not None:
        ok = ok and vs.is_large == large
    if insider is not None:
        if insider == "none":
            ok = ok and vs.insider.kind is None
        else:
            ok = ok and vs.insider.kind == insider
    if source is not None:
        ok = ok and vs.insider.source == source
    if ambiguity is not None:
        ok = ok and vs.ambiguity.enabled == ambiguity
    if unit_kernel:
        k = vs.insider.kernel
        ok = ok and k.is_constant and k.values[0] == 1.0
    if not ok:
        raise ModeMismatch(f"scenario does not match {op}", describe_mode(vs))


def _v(s):
    return s if isinstance(s, ValidatedScenario) else validate(s)


def _shared(vs):
    m, i = vs.market, vs.insurance
    rho = i.rho
    srho = math.sqrt(1.0 - rho * rho)
    return m, i, rho, srho


def _public_components(vs, weight):
    m, i, rho, _ = _shared(vs)
    rate = vs.integral(lambda t: m.r(t))
    prem = vs.integral(lambda t: vs.iota(t) ** 2
                       + vs.premium(t) ** 2 / ((1 - rho * rho) * i.b(t) ** 2))
    return {"ln_x0": math.log(vs.X0), "rate_integral": rate, "risk_premium": weight * prem}


# ---------------------------------------------------------------- small insurer, public info

def small_robust_no_insider(s):
    vs = _v(s)
    _require(vs, "small_robust_no_insider", large=False, insider="none", ambiguity=True)
    m, i, rho, srho = _shared(vs)

    pi = AffineControl(lambda t: vs.iota(t) / (2 * m.sigma(t))
                       + rho * vs.premium(t) / (2 * (1 - rho * rho) * m.sigma(t) * i.b(t)))
    kappa = AffineControl(lambda t: vs.premium(t) / (2 * (1 - rho * rho) * i.b(t) ** 2))
    th1 = AffineControl(lambda t: -vs.iota(t) / 2)
    th2 = AffineControl(lambda t: vs.premium(t) / (2 * srho * i.b(t)))
    pair = StrategyPair(pi, kappa, (th1, th2, ZERO, ZERO), "small_robust_no_insider")
    return pair, _report(_public_components(vs, 0.25))


def small_neutral_no_insider(s):
    vs = _v(s)
    _require(vs, "small_neutral_no_insider", large=False, insider="none", ambiguity=False)
    m, i, rho, _ = _shared(vs)
    pi = AffineControl(lambda t: vs.iota(t) / m.sigma(t)
                       + rho * vs.premium(t) / ((1 - rho * rho) * m.sigma(t) * i.b(t)))
    kappa = AffineControl(lambda t: vs.premium(t) / ((1 - rho * rho) * i.b(t) ** 2))
    pair = StrategyPair(pi, kappa, (ZERO,) * 4, "small_neutral_no_insider")
    return pair, _report(_public_components(vs, 0.5), label="V~")


# ---------------------------------------------------------------- small insurer, insider

def _tails(vs):
    ind = vs.insider
    k = ind.kernel
    if k.is_constant:
        phi = k.values[0]

        def tail(t):
            return phi * phi * (ind.T0 - _arr(t))
    else:
        tail = np.vectorize(lambda x: ind.norm2(float(x), ind.T0))
    return tail, ind.norm2(vs.T, ind.T0)


def _forward_integral(vs, fn):
    """t -> int_t^T fn(s) ds, vectorised."""
    if vs.constant_params and vs.insider.kernel.is_constant:
        val = float(fn(_arr(0.0)))
        return lambda t: val * (vs.T - _arr(t))
    return np.vectorize(lambda x: vs.integral(fn, float(x), vs.T, explicit_time=True))


def _gap_value(vs, drift_integral):
    T, T0 = vs.T, vs.insider.T0
    d = 2 * T0 - T
    return {"insider_log_term": -0.5 * math.log(1 - T * T / (d * d)),
            "insider_horizon_term": T / (2 * d),
            "insider_premium_term": drift_integral ** 2 / (4 * d)}


def _is_unit_kernel(vs):
    k = vs.insider.kernel
    return k.is_constant and k.values[0] == 1.0


def small_robust_insider_insurance(s):
    vs = _v(s)
    _require(vs, "small_robust_insider_insurance", large=False, insider="brownian",
             ambiguity=True, source="Wbar")
    m, i, rho, srho = _shared(vs)
    base_pair, _ = small_robust_no_insider(vs.replace(insider=type(vs.insider)()))
    tail, tail_T = _tails(vs)
    k = vs.insider.kernel
    half_prem = _forward_integral(vs, lambda x: 0.5 * k(x) * (i.lambda_premium(x) - i.a(x)) / i.b(x))

    def denom(t):
        return tail(t) + tail_T

    kappa = AffineControl(lambda t: base_pair.kappa.base(t) + k(t) * half_prem(t) / (i.b(t) * denom(t)),
                          lambda t: -k(t) / (i.b(t) * denom(t)))

    def bracket_base(t):
        return -half_prem(t) / denom(t)

    def bracket_slope(t):
        return 1.0 / denom(t) - 1.0 / tail(t)

    th1 = AffineControl(lambda t: -vs.iota(t) / 2 + rho * k(t) * bracket_base(t),
                        lambda t: rho * k(t) * bracket_slope(t))
    th2 = AffineControl(lambda t: base_pair.theta[1].base(t) + srho * k(t) * bracket_base(t),
                        lambda t: srho * k(t) * bracket_slope(t))
    pair = StrategyPair(base_pair.pi, kappa, (th1, th2, ZERO, ZERO),
                        "small_robust_insider_insurance", "Wbar")
    comps = _public_components(vs, 0.25)
    if _is_unit_kernel(vs):
        comps.update(_gap_value(vs, vs.integral(lambda t: (i.lambda_premium(t) - i.a(t)) / i.b(t))))
        return pair, _report(comps)
    return pair, ValueReport(None, comps, note="general kernel: value by Monte Carlo only")


def small_robust_insider_asset(s):
    vs = _v(s)
    _require(vs, "small_robust_insider_asset", large=False, insider="brownian",
             ambiguity=True, source="W1")
    m, i, rho, srho = _shared(vs)
    base_pair, _ = small_robust_no_insider(vs.replace(insider=type(vs.insider)()))
    tail, tail_T = _tails(vs)
    k = vs.insider.kernel
    half_iota = _forward_integral(vs, lambda x: 0.5 * k(x) * vs.iota(x))

    def denom(t):
        return tail(t) + tail_T

    pi = AffineControl(lambda t: base_pair.pi.base(t) + k(t) * half_iota(t) / (m.sigma(t) * denom(t)),
                       lambda t: k(t) / (m.sigma(t) * denom(t)))
    th1 = AffineControl(lambda t: -vs.iota(t) / 2 + k(t) * half_iota(t) / denom(t),
                        lambda t: k(t) * (1.0 / denom(t) - 1.0 / tail(t)))
    pair = StrategyPair(pi, base_pair.kappa, (th1, base_pair.theta[1], ZERO, ZERO),
                        "small_robust_insider_asset", "W1")
    comps = _public_components(vs, 0.25)
    if _is_unit_kernel(vs):
        comps.update(_gap_value(vs, vs.integral(vs.iota)))
        return pair, _report(comps)
    return pair, ValueReport(None, comps, note="general kernel: value by Monte Carlo only")


def _insider_second_moments(vs):
    """Weights (E phi1^2, E phi1 phi2, E phi2^2) integrated over [0, T].

    Under the insider law the state has variance |kernel|^2_[t,T0], so
    E[phi_i phi_j] = w_i w_j kernel_t^2 / |kernel|^2_[t,T0], and the time
    integral of kernel^2/|kernel|^2_[t,T0] is ln(|k|^2_[0,T0]/|k|^2_[T,T0]).
    """
    if vs.insider.kind != "brownian":
        return 0.0, 0.0, 0.0, 0.0
    drift = drift_for(vs.insider, vs.insurance.rho)
    ind = vs.insider
    log_ratio = math.log(ind.norm2(0.0, ind.T0) / ind.norm2(vs.T, ind.T0))
    return drift.w1 ** 2, drift.w1 * drift.w2, drift.w2 ** 2, log_ratio


def small_neutral_insider(s):
    vs = _v(s)
    _require(vs, "small_neutral_insider", large=False, insider="brownian", ambiguity=False)
    m, i, rho, srho = _shared(vs)
    base_pair, base_val = small_neutral_no_insider(vs.replace(insider=type(vs.insider)()))
    drift = drift_for(vs.insider, rho)
    g = drift.gain
    # with theta = 0 the first-order conditions give
    # kappa = neutral - phi2/(srho b), pi = neutral + (phi1 - rho phi2/srho)/sigma
    kappa = AffineControl(base_pair.kappa.base,
                          lambda t: -drift.w2 * g(t) / (srho * i.b(t)))
    pi = AffineControl(base_pair.pi.base,
                       lambda t: (drift.w1 - rho * drift.w2 / srho) * g(t) / m.sigma(t))
    pair = StrategyPair(pi, kappa, (ZERO,) * 4, "small_neutral_insider", vs.insider.source)
    comps = dict(base_val.components)
    *_, log_ratio = _insider_second_moments(vs)
    comps["insider_gain"] = 0.5 * log_ratio
    return pair, _report(comps, label="V~")


# ---------------------------------------------------------------- jump case

def _jump_parts(vs):
    m, i = vs.market, vs.insurance
    lamb = i.jump2.intensity
    gam = i.jump2.gamma

    def prem(t):
        return i.lambda_premium(t) - i.a(t)

    return m, i, lamb, gam, prem


def _robust_jump_kappa(vs):
    m, i, lamb, gam, prem = _jump_parts(vs)

    def f(t):
        g, p = gam(t), prem(t)
        return p / (p * g + lamb * g * g + np.sqrt(lamb * p * g ** 3 + lamb ** 2 * g ** 4))

    return f


def _robust_jump_theta4(vs, kappa_fn):
    m, i, lamb, gam, prem = _jump_parts(vs)
    return lambda t: prem(t) / (lamb * gam(t)) * (1 - kappa_fn(t) * gam(t)) - kappa_fn(t) * gam(t)


def _neutral_jump_kappa(vs):
    m, i, lamb, gam, prem = _jump_parts(vs)
    return lambda t: prem(t) / (prem(t) * gam(t) + lamb * gam(t) ** 2)


def jump_robust_no_insider(s):
    vs = _v(s)
    _require(vs, "jump_robust_no_insider", jump=True, insider="none", ambiguity=True)
    m = vs.market
    kap = _robust_jump_kappa(vs)
    pair = StrategyPair(AffineControl(lambda t: vs.iota(t) / (2 * m.sigma(t))), AffineControl(kap),
                        (AffineControl(lambda t: -vs.iota(t) / 2), ZERO, ZERO,
                         AffineControl(_robust_jump_theta4(vs, kap))),
                        "jump_robust_no_insider")
    comps = {"ln_x0": math.log(vs.X0), "rate_integral": vs.integral(m.r)}
    return pair, ValueReport(None, comps, note="no closed-form value: use Monte Carlo")


def jump_neutral_no_insider(s):
    vs = _v(s)
    _require(vs, "jump_neutral_no_insider", jump=True, insider="none", ambiguity=False)
    m, i, lamb, gam, prem = _jump_parts(vs)
    kap = _neutral_jump_kappa(vs)
    pair = StrategyPair(AffineControl(lambda t: vs.iota(t) / m.sigma(t)), AffineControl(kap),
                        (ZERO,) * 4, "jump_neutral_no_insider")

    def claim_term(t):
        x = kap(t) * gam(t)
        return prem(t) * kap(t) + lamb * (x + np.log1p(-x))

    comps = {"ln_x0": math.log(vs.X0), "rate_integral": vs.integral(m.r),
             "investment_premium": 0.5 * vs.integral(lambda t: vs.iota(t) ** 2),
             "claim_premium": vs.integral(claim_term)}
    return pair, _report(comps, label="V~")


def _gaussian_w1_correction(vs):
    """Closed Gaussian evaluation of the ratio term for the robust W1 insider.

    Returns (base, slope) such that the added investment term is
    kernel_t (S + 0.5 int_t^T kernel iota) / (sigma (|k|^2_[t,T0] + |k|^2_[T,T0])).
    """
    m = vs.market
    tail, tail_T = _tails(vs)
    k = vs.insider.kernel
    half_iota = _forward_integral(vs, lambda x: 0.5 * k(x) * vs.iota(x))

    def base(t):
        return k(t) * half_iota(t) / (m.sigma(t) * (tail(t) + tail_T))

    def slope(t):
        return k(t) / (m.sigma(t) * (tail(t) + tail_T))

    return base, slope


def jump_insider_strategies(s, experimental=False):
    vs = _v(s)
    _require(vs, "jump_insider_strategies", jump=True)
    ind = vs.insider
    m, i, lamb, gam, prem = _jump_parts(vs)
    amb = vs.ambiguity.enabled
    if ind.kind == "brownian" and ind.source == "W1":
        tail, _ = _tails(vs)
        k = ind.kernel
        if not amb:
            pi = AffineControl(lambda t: vs.iota(t) / m.sigma(t),
                               lambda t: k(t) / (m.sigma(t) * tail(t)))
            return StrategyPair(pi, AffineControl(_neutral_jump_kappa(vs)), (ZERO,) * 4,
                                "jump_neutral_insider_W1", "W1")
        kap = _robust_jump_kappa(vs)
        cb, cs = _gaussian_w1_correction(vs)
        pi = AffineControl(lambda t: vs.iota(t) / (2 * m.sigma(t)) + cb(t), cs)
        th1 = AffineControl(lambda t: -vs.iota(t) / 2 + m.sigma(t) * cb(t),
                            lambda t: m.sigma(t) * cs(t) - k(t) / tail(t))
        pair = StrategyPair(pi, AffineControl(kap),
                            (th1, ZERO, ZERO, AffineControl(_robust_jump_theta4(vs, kap))),
                            "jump_robust_insider_W1", "W1")
        pair.extras["ratio_by_nested_mc"] = lambda t, state, **kw: robust_w1_jump_pi(vs, t, state, **kw)
        return pair
    if ind.kind == "eta2":
        if not amb:
            base = _neutral_jump_kappa(vs)
            kap = AffineControl(base, lambda t: -1.0 / ((ind.T0 - _arr(t)) * (prem(t) + lamb * gam(t))))
            return StrategyPair(AffineControl(lambda t: vs.iota(t) / m.sigma(t)), kap, (ZERO,) * 4,
                                "jump_neutral_insider_eta2", "eta2")
        if not experimental:
            raise ExperimentalFeature("robust claim-jump insider needs --experimental")
        kap = _robust_jump_kappa(vs)
        pair = StrategyPair(AffineControl(lambda t: vs.iota(t) / (2 * m.sigma(t))), AffineControl(kap),
                            (AffineControl(lambda t: -vs.iota(t) / 2), ZERO, ZERO,
                             AffineControl(_robust_jump_theta4(vs, kap))),
                            "jump_robust_insider_eta2_experimental", "eta2")
        pair.extras["kappa_at"] = lambda t, state, **kw: robust_eta2_kappa(vs, t, state, **kw)
        return pair
    raise ModeMismatch("jump insider strategies need a W1 or claim-jump insider", describe_mode(vs))


def robust_w1_jump_pi(s, t, state, n_inner=20_000, n_steps=200, seed=0):
    """Robust W1-insider investment at (t, S) by nested Monte Carlo.

    Evaluates the ratio of conditional expectations with weight
    sqrt(Pi_{J,a}(t,T) g_T(y)) over inner paths on [t, T].
    Returns (pi, standard error of the ratio).
    """
    vs = _v(s)
    m, i, lamb, gam, prem = _jump_parts(vs)
    ind = vs.insider
    T = vs.T
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    h = (T - t) / n_steps
    grid = t + h * np.arange(n_steps)
    k = ind.kernel(grid)
    io = vs.iota(grid)
    q = prem(grid) / (lamb * gam(grid))
    dw = rng.standard_normal((n_inner, n_steps)) * math.sqrt(h)
    dn = rng.poisson(lamb * h, (n_inner, n_steps))
    i_phi = dw @ k
    i_iota = dw @ io
    log_pi = (-np.sum(m.r(grid)) * h - i_iota - 0.5 * np.sum(io ** 2) * h
              + dn @ np.log1p(q) - lamb * h * np.sum(q))
    tail_T = ind.norm2(T, ind.T0)
    resid = state - i_phi
    log_g = -resid ** 2 / (2 * tail_T) - 0.5 * math.log(2 * math.pi * tail_T)
    logw = 0.5 * (log_pi + log_g)
    w = np.exp(logw - logw.max())
    ratio = np.sum(w * resid) / np.sum(w)
    infl = (w * (resid - ratio)) / np.mean(w)
    se = float(np.std(infl) / math.sqrt(n_inner))
    k_t = float(ind.kernel(t))
    scale = 0.5 * k_t / (float(m.sigma(t)) * tail_T)
    return float(vs.iota(t) / (2 * m.sigma(t)) + scale * ratio), scale * se


def _poisson_pmf_fourier(m, mean, nodes=64):
    """Poisson probabilities from the inverse Fourier integral on [-pi, pi]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = math.pi * x
    w = math.pi * w
    m = np.asarray(m, dtype=float)
    char = np.exp(mean * (np.exp(1j * x) - 1.0))
    vals = (char[None, :] * np.exp(-1j * np.outer(m, x))) @ w
    return np.clip(vals.real / (2 * math.pi), 0.0, None)


def robust_eta2_kappa(s, t, state, nodes=64):
    """Experimental robust claim-jump insider liability ratio at (t, S).

    The conditional densities are Fourier integrals evaluated by Gauss-Legendre
    quadrature over one period; the expectation over the claim count on
    (t, T] is a finite Poisson sum.
    """
    vs = _v(s)
    m, i, lamb, gam, prem = _jump_parts(vs)
    ind = vs.insider
    T, T0 = vs.T, ind.T0
    remaining = int(round(float(state) + lamb * (T0 - t)))
    g, p = float(gam(t)), float(prem(t))
    q = p / (lamb * g)
    j = np.arange(0, remaining + 1)
    lam_mid = lamb * (T - t)
    log_pj = -lam_mid + j * math.log(lam_mid) - np.array([math.lgamma(x + 1) for x in j]) \
        if lam_mid > 0 else np.where(j == 0, 0.0, -np.inf)
    weight = np.exp(log_pj + 0.5 * (j * math.log1p(q) - q * lam_mid))
    mean_after = lamb * (T0 - T)
    p_here = _poisson_pmf_fourier(remaining - j, mean_after, nodes)
    p_shift = _poisson_pmf_fourier(remaining - j - 1, mean_after, nodes)
    num = np.sum(weight * (np.sqrt(p_shift) - np.sqrt(p_here)))
    den = np.sum(weight * np.sqrt(p_here))
    base = float(_robust_jump_kappa(vs)(t))
    return base - math.sqrt(lamb) * num / (math.sqrt(p * g + lamb * g * g) * den)


# ---------------------------------------------------------------- large insurer

def large_neutral(s):
    vs = _v(s)
    _require(vs, "large_neutral", ambiguity=False)
    m, i, rho, srho = _shared(vs)
    grid = np.linspace(0.0, vs.T, 1001)
    ratio = vs.sigma_tilde(grid) / m.sigma(grid)
    if np.any(np.abs(ratio - rho * rho) < 1e-14):
        raise SingularConfiguration("sigma_tilde/sigma equals rho^2")
    if vs.insider.kind not in (None, "brownian"):
        raise ModeMismatch("large insurer supports Brownian insiders only", describe_mode(vs))
    drift = drift_for(vs.insider, rho)
    g = drift.gain

    def den_pi(t):
        return (vs.sigma_tilde(t) / m.sigma(t) - rho * rho) * m.sigma(t)

    def den_kappa(t):
        return (1 - rho * rho * m.sigma(t) / vs.sigma_tilde(t)) * i.b(t)

    def cross(t):
        return rho * (m.sigma(t) / vs.sigma_tilde(t) - 1)

    # phi~1 = iota + w1 g S, phi~2 = c - w2 g S
    pi = AffineControl(lambda t: ((1 - rho * rho) * vs.iota(t) + rho * srho * vs.c(t)) / den_pi(t),
                       lambda t: ((1 - rho * rho) * drift.w1 - rho * srho * drift.w2) * g(t) / den_pi(t))
    kappa = AffineControl(lambda t: (srho * vs.c(t) + cross(t) * vs.iota(t)) / den_kappa(t),
                          lambda t: (-srho * drift.w2 + cross(t) * drift.w1) * g(t) / den_kappa(t))
    pair = StrategyPair(pi, kappa, (ZERO,) * 4, "large_neutral",
                        "none" if vs.insider.kind is None else vs.insider.source)

    def coef(t):
        q = m.sigma(t) / vs.sigma_tilde(t)
        d = 1 - rho * rho * q
        return ((1 - 2 * rho * rho) * q + rho * rho) / d, 2 * rho * srho * (q - 1) / d, (1 - rho * rho) / d

    def public(t):
        a11, a12, a22 = coef(t)
        io, c = vs.iota(t), vs.c(t)
        return a11 * io * io + a12 * io * c + a22 * c * c

    comps = {"ln_x0": math.log(vs.X0), "rate_integral": vs.integral(m.r),
             "risk_premium": 0.5 * vs.integral(public)}
    if vs.insider.kind == "brownian":
        e11, e12, e22, _ = _insider_second_moments(vs)
        k = vs.insider.kernel
        tail, _ = _tails(vs)

        def private(t):
            a11, a12, a22 = coef(t)
            return (a11 * e11 - a12 * e12 + a22 * e22) * k(t) ** 2 / tail(t)

        comps["insider_gain"] = 0.5 * vs.integral(private, explicit_time=True)
    return pair, _report(comps, label="V~")


# ---------------------------------------------------------------- critical future time

def critical_residual(T0, iota, c, T=1.0, kind="insurance"):
    """Robust insider value minus neutral public value, scaled by 4.

    Zero at the critical future time. With T=1 and the insurance kind it
    reads iota^2 + c^2 - (c^2 + 2)/(2T0 - 1) + 2 ln(1 - 1/(2T0 - 1)^2).
    """
    d = 2.0 * T0 - T
    known = c if kind == "insurance" else iota
    return ((iota * iota + c * c) * T - (known * known * T * T + 2 * T) / d
            + 2.0 * math.log1p(-(T * T) / (d * d)))


def critical_time_from(iota, c, T=1.0, kind="insurance", tol=1e-10, max_iter=400):
    lo, hi = T + 1e-3, 1e6
    flo, fhi = critical_residual(lo, iota, c, T, kind), critical_residual(hi, iota, c, T, kind)
    if not (flo < 0 < fhi):
        raise NoBracket(f"residual does not change sign on ({lo:g}, {hi:g}): "
                        f"f(lo)={flo:.3e}, f(hi)={fhi:.3e}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = critical_residual(mid, iota, c, T, kind)
        if abs(fm) < tol:
            return mid, fm
        if fm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    mid = 0.5 * (lo + hi)
    return mid, critical_residual(mid, iota, c, T, kind)


def critical_future_time(s, kind="insurance"):
    vs = _v(s)
    if vs.is_jump or vs.is_large or not vs.constant_params or vs.insurance.rho != 0.0:
        raise ModeMismatch("critical future time needs constant continuous parameters with rho=0",
                           describe_mode(vs))
    i = vs.insurance
    iota = float(vs.iota(0.0))
    c = float((i.lambda_premium(0.0) - i.a(0.0)) / i.b(0.0))
    return critical_time_from(iota, c, vs.T, kind)


# ---------------------------------------------------------------- dispatch and checks

OPERATIONS = {
    "small_robust_no_insider": small_robust_no_insider,
    "small_neutral_no_insider": small_neutral_no_insider,
    "small_robust_insider_insurance": small_robust_insider_insurance,
    "small_robust_insider_asset": small_robust_insider_asset,
    "small_neutral_insider": small_neutral_insider,
    "jump_robust_no_insider": jump_robust_no_insider,
    "jump_neutral_no_insider": jump_neutral_no_insider,
    "large_neutral": large_neutral,
}


def solve(s, experimental=False):
    """Dispatch to the closed form matching the scenario: (pair, report)."""
    vs = _v(s)
    mode = describe_mode(vs)
    if mode == "jump_insider_strategies":
        pair = jump_insider_strategies(vs, experimental=experimental)
        return pair, ValueReport(None, {"ln_x0": math.log(vs.X0)},
                                 note="insider jump case: value by Monte Carlo only")
    if mode == "bsde":
        raise ModeMismatch("robust large insurer has no closed form", "bsde")
    return OPERATIONS[mode](vs)


def foc_residuals(s, pair: StrategyPair, t, state=0.0):
    """Residuals of the two log-utility first-order conditions at (t, S).

    Continuous part plus the claim-jump terms with the tilted intensity.
    """
    vs = _v(s)
    m, i = vs.market, vs.insurance
    rho = i.rho
    srho = math.sqrt(1 - rho * rho)
    t = _arr(t)
    ctl = pair.evaluate(t, state)
    pi, ka, th1, th2, th4 = ctl["pi"], ctl["kappa"], ctl["theta1"], ctl["theta2"], ctl["theta4"]
    drift = drift_for(vs.insider, rho)
    f1, f2 = drift.phi1(t, state), drift.phi2(t, state)
    sig, b = m.sigma(t), i.b(t)
    mu = m.mu0(t) + m.varrho(t) * pi
    r21 = (mu - m.r(t) + m.varrho(t) * pi - sig * sig * pi + rho * sig * b * ka
           + sig * f1 + sig * th1)
    r22 = (i.lambda_premium(t) - i.a(t) + rho * sig * b * pi - b * b * ka
           - rho * b * f1 - rho * b * th1 - srho * b * f2 - srho * b * th2)
    if vs.is_jump:
        lamb = i.jump2.intensity
        g = i.jump2.gamma(t)
        if vs.insider.kind == "eta2":
            gh = lamb + np.asarray(state, dtype=float) / (vs.insider.T0 - t)
        else:
            gh = lamb
        one = 1 - ka * g
        r22 = r22 - ka * g * g * lamb / one - g * (1 + th4) * gh / one + g * lamb / one
    return r21, r22
