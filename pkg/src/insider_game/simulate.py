"""Monte Carlo engine for wealth and density paths in insider coordinates.

Paths are generated in blocks of ``block_size``. Block ``i`` draws from
``Philox(SeedSequence(seed, spawn_key=(i,)))``, and each block is generated
in full before truncation, so path ``j`` has the same drivers whatever
``n_paths`` or the worker count. Aggregates are reduced in block order.
"""
from __future__ import annotations

import csv
import dataclasses
import gzip
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .closedform import StrategyPair, ZERO, constant_pair
from .enlargement import drift_for
from .errors import AdmissibilityBreach, DomainError, GeneratorBreach
from .scenario import ValidatedScenario, validate


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1e-3
    seed: int = 20240607
    antithetic: bool = False
    common_random_numbers: bool = True
    threads: int = 1
    checkpoints: int = 10
    block_size: int = 2048
    backend: str | None = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError("n_paths must be >= 1")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError("dt must be positive")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise DomainError("antithetic sampling needs an even path count")
        if self.checkpoints < 1 or self.threads < 1 or self.block_size < 2:
            raise DomainError("checkpoints, threads and block_size must be positive")

    @property
    def steps_per_unit(self):
        return int(round(1.0 / self.dt))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_scenario(cls, s, **kw):
        run = s.run
        base = dict(n_paths=run.n_paths, dt=run.dt, seed=run.seed, antithetic=run.antithetic,
                    common_random_numbers=run.crn)
        base.update({k: v for k, v in kw.items() if v is not None})
        return cls(**base)


def _steps(horizon, dt):
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise DomainError(f"dt={dt:g} does not divide the horizon {horizon:g}")
    return n


@dataclass
class PathBundle:
    """Drivers plus (after evolution) per-path terminal values and checkpoints.

    Drivers are not stored: ``drivers(block)`` regenerates them from the seed.
    """

    scenario: ValidatedScenario
    cfg: SimConfig
    horizon: float
    n_steps: int
    ck_steps: np.ndarray
    strategy: StrategyPair | None = None
    generator: tuple | None = None
    terminal: np.ndarray | None = None
    checkpoints: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    # ------------------------------------------------------------ layout
    @property
    def grid(self):
        return self.cfg.dt * np.arange(self.n_steps + 1)

    @property
    def ck_times(self):
        return self.cfg.dt * self.ck_steps

    @property
    def n_blocks(self):
        return -(-self.cfg.n_paths // self.cfg.block_size)

    def block_slice(self, i):
        lo = i * self.cfg.block_size
        return slice(lo, min(lo + self.cfg.block_size, self.cfg.n_paths))

    # ------------------------------------------------------------ drivers
    def drivers(self, i):
        """(y0, state0, dw1, dw2, dn) for block ``i``, truncated to its paths."""
        vs, cfg = self.scenario, self.cfg
        full = cfg.block_size
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(i,))))
        ind = vs.insider
        dt = cfg.dt
        sq = math.sqrt(dt)

        def normals(shape_rows, scale):
            if cfg.antithetic:
                half = rng.standard_normal((shape_rows, full // 2)) * scale
                out = np.empty((shape_rows, full))
                out[:, 0::2] = half
                out[:, 1::2] = -half
                return out
            return rng.standard_normal((shape_rows, full)) * scale

        y0 = np.zeros(full)
        state0 = np.zeros(full)
        if ind.kind == "brownian":
            if ind.realized_value is not None:
                y0[:] = ind.realized_value
            else:
                y0 = normals(1, math.sqrt(ind.norm2(0.0, ind.T0)))[0]
            state0 = y0.copy()
        dw1 = normals(self.n_steps, sq)
        dw2 = normals(self.n_steps, sq)
        if vs.is_jump:
            lamb = vs.insurance.jump2.intensity
            if ind.kind == "eta2":
                total = _steps(ind.T0, dt)
                counts = rng.poisson(lamb * dt, (max(total, self.n_steps), full)).astype(float)
                if ind.realized_value is not None:
                    raise DomainError("conditioning on a realized claim count is not supported")
                y0 = counts[:total].sum(axis=0) - lamb * ind.T0
                state0 = y0.copy()
                dn = counts[: self.n_steps]
            else:
                dn = rng.poisson(lamb * dt, (self.n_steps, full)).astype(float)
        else:
            dn = np.zeros((0, 0))
        m = self.block_slice(i).stop - self.block_slice(i).start
        if m < full:
            y0, state0, dw1, dw2 = y0[:m], state0[:m], dw1[:, :m], dw2[:, :m]
            if dn.size:
                dn = dn[:, :m]
        return y0, state0, np.ascontiguousarray(dw1), np.ascontiguousarray(dw2), np.ascontiguousarray(dn)

    def y0(self):
        return np.concatenate([self.drivers(i)[0] for i in range(self.n_blocks)])

    # ------------------------------------------------------------ results
    def _need(self):
        if self.terminal is None:
            raise ValueError("bundle has not been evolved")

    @property
    def ln_x(self):
        self._need()
        return math.log(self.scenario.X0) + self.terminal[K.OUT_LNX]

    @property
    def x(self):
        return np.exp(self.ln_x)

    @property
    def ln_eps(self):
        self._need()
        return self.terminal[K.OUT_LNEPS]

    @property
    def eps(self):
        return np.exp(self.ln_eps)

    @property
    def penalty_integral(self):
        self._need()
        return self.terminal[K.OUT_INT_EG]

    @property
    def eps_integral(self):
        self._need()
        return self.terminal[K.OUT_INT_EPS]

    @property
    def jump_counts(self):
        self._need()
        return self.terminal[K.OUT_JUMPS]

    def checkpoint(self, name):
        self._need()
        idx = {"lnx": K.CK_LNX, "lneps": K.CK_LNEPS, "w1h": K.CK_W1H, "w2h": K.CK_W2H,
               "w1": K.CK_W1, "w2": K.CK_W2, "state": K.CK_STATE,
               "jumps": K.CK_JUMPS}[name]
        out = self.checkpoints[idx]
        if name == "lnx":
            out = out + math.log(self.scenario.X0)
        return out

    def j_samples(self):
        """Per-path eps_T ln X_T + int eps g ds."""
        return self.eps * self.ln_x + self.penalty_integral

    def dump_csv(self, path, n_dump=100):
        """Write (path_id, t, w1, w2, x, eps) at checkpoints; gzip if the name ends in .gz."""
        self._need()
        opener = gzip.open if str(path).endswith(".gz") else open
        w1, w2 = self.checkpoint("w1"), self.checkpoint("w2")
        x, eps = np.exp(self.checkpoint("lnx")), np.exp(self.checkpoint("lneps"))
        with opener(path, "wt", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["path_id", "t", "w1", "w2", "x", "eps"])
            for j in range(min(n_dump, self.cfg.n_paths)):
                for c, t in enumerate(self.ck_times):
                    wr.writerow([j, repr(float(t)), repr(float(w1[c, j])), repr(float(w2[c, j])),
                                 repr(float(x[c, j])), repr(float(eps[c, j]))])


def simulate_drivers(s, cfg: SimConfig, horizon=None) -> PathBundle:
    """Set up a bundle of driver paths on [0, horizon] (default T).

    ``horizon`` may exceed T, e.g. T0 to inspect the insider bridge; controls
    are switched off beyond T.
    """
    vs = s if isinstance(s, ValidatedScenario) else validate(s)
    horizon = vs.T if horizon is None else float(horizon)
    n_steps = _steps(horizon, cfg.dt)
    ck = np.unique(np.round(np.linspace(0, n_steps, cfg.checkpoints + 1)).astype(np.int64))
    return PathBundle(vs, cfg, horizon, n_steps, ck)


def _parameter_matrix(vs, grid):
    m, i = vs.market, vs.insurance
    P = np.zeros((K.N_PARAMS, grid.size))
    P[K.R] = m.r(grid)
    P[K.MU0] = m.mu0(grid)
    P[K.VARRHO] = m.varrho(grid)
    P[K.SIGMA] = m.sigma(grid)
    P[K.A] = i.a(grid)
    P[K.B] = i.b(grid)
    P[K.LAM] = i.lambda_premium(grid)
    P[K.GAMMA2] = i.jump2.gamma(grid) if i.jump2 is not None else 0.0
    ind = vs.insider
    P[K.TLEFT] = 1.0
    if ind.kind == "brownian":
        drift = drift_for(ind, i.rho)
        P[K.KERNEL] = ind.kernel(grid)
        P[K.GAIN] = drift.gain(grid)
    elif ind.kind == "eta2":
        P[K.TLEFT] = ind.T0 - grid
    return P


def _coefficients(bundle, pair, generator):
    grid = bundle.grid[:-1]
    pair = pair if pair is not None else constant_pair(mode="null")
    base, slope = pair.coefficients(grid)
    if generator is not None:
        gp = pair.with_generator(generator)
        b2, s2 = gp.coefficients(grid)
        base[2:], slope[2:] = b2[2:], s2[2:]
    beyond = grid >= bundle.scenario.T - 1e-12
    base[:, beyond] = 0.0
    slope[:, beyond] = 0.0
    return np.ascontiguousarray(base), np.ascontiguousarray(slope)


def _state_kind(vs):
    return {None: K.STATE_NONE, "brownian": K.STATE_BROWNIAN, "eta2": K.STATE_ETA2}[vs.insider.kind]


def evolve(bundle: PathBundle, strategy: StrategyPair | None = None, generator=None) -> PathBundle:
    """Run the fused kernel for (strategy, generator) over every block.

    ``generator`` is a 4-tuple of affine controls; when omitted the
    strategy pair's own generator is used.
    """
    strategy = strategy if strategy is not None else bundle.strategy
    if generator is None:
        generator = bundle.generator if bundle.generator is not None else (
            strategy.theta if strategy is not None else (ZERO,) * 4)
    return evolve_many(bundle, [(strategy, generator)])[0]


def evolve_many(bundle: PathBundle, runs) -> list:
    """Evolve several (strategy, generator) pairs on the same drivers.

    Drivers are generated once per block and shared, which gives common
    random numbers across the runs at the cost of a single draw.
    """
    vs, cfg = bundle.scenario, bundle.cfg
    runs = [(st, tuple(gen) if gen is not None else (st.theta if st is not None else (ZERO,) * 4))
            for st, gen in runs]
    coeffs = [_coefficients(bundle, st, gen) for st, gen in runs]
    params = np.ascontiguousarray(_parameter_matrix(vs, bundle.grid[:-1]))
    drift = drift_for(vs.insider, vs.insurance.rho)
    lamb = vs.insurance.jump2.intensity if vs.is_jump else 0.0
    n = cfg.n_paths
    n_ck = bundle.ck_steps.size
    terminal = [np.empty((K.N_OUT, n)) for _ in runs]
    ck = [np.empty((K.N_CK, n_ck, n)) for _ in runs]
    kind = _state_kind(vs)

    def run(i):
        sl = bundle.block_slice(i)
        _, state0, dw1, dw2, dn = bundle.drivers(i)
        state0 = np.ascontiguousarray(state0)
        m = sl.stop - sl.start
        statuses = []
        for r, (base, slope) in enumerate(coeffs):
            out = np.empty((K.N_OUT, m))
            cko = np.empty((K.N_CK, n_ck, m))
            code, path, step = K.path_kernel(
                dw1, dw2, dn, state0, params, base, slope, bundle.ck_steps,
                float(vs.insurance.rho), float(lamb), float(cfg.dt), float(drift.w1),
                float(drift.w2), kind, bool(vs.is_jump), out, cko, use=cfg.backend)
            terminal[r][:, sl] = out
            ck[r][:, :, sl] = cko
            if code:
                statuses.append((int(step), int(path) + sl.start, int(code)))
        return statuses

    if cfg.threads > 1 and bundle.n_blocks > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            found = list(ex.map(run, range(bundle.n_blocks)))
    else:
        found = [run(i) for i in range(bundle.n_blocks)]
    breaches = [b for block in found for b in block]
    if breaches:
        step, path, code = min(breaches)
        t = step * cfg.dt
        if code == K.BREACH_GENERATOR:
            raise GeneratorBreach(path, t, "theta4 <= -1")
        raise AdmissibilityBreach(path, t, "kappa*gamma2 >= 1 - 1e-6")
    return [dataclasses.replace(bundle, strategy=st, generator=gen, terminal=terminal[r],
                                checkpoints=ck[r])
            for r, (st, gen) in enumerate(runs)]


def evolve_wealth(bundle: PathBundle, u: StrategyPair) -> PathBundle:
    """Evolve wealth under ``u``; any density already requested is kept."""
    gen = bundle.generator if bundle.generator is not None else (ZERO,) * 4
    return evolve(bundle, u, gen)


def evolve_density(bundle: PathBundle, v) -> PathBundle:
    """Evolve the density for the generator ``v`` (4 affine controls or a StrategyPair)."""
    gen = v.theta if isinstance(v, StrategyPair) else tuple(v)
    strat = bundle.strategy if bundle.strategy is not None else constant_pair(mode="null")
    return evolve(bundle, strat, gen)


def mean_se(samples, antithetic=False):
    """Sample mean and standard error; antithetic pairs are adjacent paths."""
    x = np.asarray(samples, dtype=float)
    if antithetic and x.size >= 4:
        x = 0.5 * (x[0::2] + x[1::2])
    n = x.size
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(x)), se


def estimate_J(s, u: StrategyPair, v=None, cfg: SimConfig | None = None, bundle=None):
    """Monte Carlo J(u, v) = E[eps_T ln X_T + int_0^T eps_s g(s, v_s) ds]: (mean, stderr)."""
    vs = s if isinstance(s, ValidatedScenario) else validate(s)
    cfg = cfg or SimConfig.from_scenario(vs)
    bundle = bundle or simulate_drivers(vs, cfg)
    gen = u.theta if v is None else (v.theta if isinstance(v, StrategyPair) else tuple(v))
    out = evolve(bundle, u, gen)
    return mean_se(out.j_samples(), cfg.antithetic)
