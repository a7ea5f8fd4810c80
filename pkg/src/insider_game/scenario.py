"""Problem data model, parameter curves, config grammar and validation."""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .errors import ConstraintViolation, ParseError, UnknownKey

EPS_SIGMA = 1e-8
EPS_GAMMA = 1e-8
MIN_INSIDER_GAP = 1e-3
CHECK_POINTS = 1001


# ---------------------------------------------------------------- curves

@dataclass(frozen=True)
class Curve:
    """Deterministic parameter curve of time.

    ``kind`` is ``const``, ``pwc`` (right-continuous steps starting at each
    knot) or ``pwl`` (linear interpolation, flat outside the knots).
    """

    kind: str
    knots: tuple
    values: tuple

    @classmethod
    def const(cls, v):
        return cls("const", (0.0,), (float(v),))

    @property
    def is_constant(self):
        return self.kind == "const" or len(set(self.values)) == 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.full(t.shape, self.values[0]) if t.ndim else float(self.values[0])
        k = np.asarray(self.knots)
        v = np.asarray(self.values)
        if self.kind == "pwl":
            out = np.interp(t, k, v)
        else:
            idx = np.clip(np.searchsorted(k, t, side="right") - 1, 0, len(v) - 1)
            out = v[idx]
        return out if t.ndim else float(out)

    def breakpoints(self, a, b):
        return [x for x in self.knots if a < x < b]

    def text(self):
        if self.kind == "const":
            return repr(self.values[0])
        pairs = ", ".join(f"{k!r}:{v!r}" for k, v in zip(self.knots, self.values))
        return f"{self.kind} {pairs}"

    @classmethod
    def parse(cls, text):
        text = text.strip()
        m = re.match(r"^(pwc|pwl)\s+(.*)$", text)
        if not m:
            return cls.const(float(text))
        kind, body = m.groups()
        knots, values = [], []
        for item in body.split(","):
            if ":" not in item:
                raise ValueError(f"curve item {item.strip()!r} is not knot:value")
            k, v = item.split(":", 1)
            knots.append(float(k))
            values.append(float(v))
        if not knots or any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("curve knots must be strictly increasing")
        return cls(kind, tuple(knots), tuple(values))


def as_curve(x):
    return x if isinstance(x, Curve) else Curve.const(x)


def integrate_fn(fn, a, b, curves=(), const=False):
    """Integral of a vectorised function of time over [a, b].

    Constant inputs use the exact product; otherwise adaptive quadrature
    split at every curve knot.
    """
    if b <= a:
        return 0.0
    if const:
        return float(fn(np.asarray(a))) * (b - a)
    pts = sorted({p for c in curves for p in c.breakpoints(a, b)})
    edges = [a, *pts, b]
    total = 0.0
    for lo, hi in zip(edges, edges[1:]):
        val, _ = integrate.quad(lambda s: float(fn(np.asarray(s))), lo, hi,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
    return total


# ---------------------------------------------------------------- data model

@dataclass(frozen=True)
class JumpSpec:
    intensity: float
    gamma: Curve = field(default_factory=lambda: Curve.const(1.0))
    law: str = "point"


@dataclass(frozen=True)
class MarketParams:
    r: Curve
    mu0: Curve
    sigma: Curve
    varrho: Curve = field(default_factory=lambda: Curve.const(0.0))
    jump1: JumpSpec | None = None


@dataclass(frozen=True)
class InsuranceParams:
    a: Curve
    b: Curve
    lambda_premium: Curve
    rho: float = 0.0
    jump2: JumpSpec | None = None


@dataclass(frozen=True)
class InsiderSpec:
    """Extra information of the insurer.

    ``kind`` is ``None`` (public information only), ``"brownian"`` for the
    functional int_0^T0 kernel dW of ``source`` (``"W1"`` or ``"Wbar"``),
    or ``"eta2"`` for the compensated claim-jump value at ``T0``.
    """

    kind: str | None = None
    source: str = "Wbar"
    kernel: Curve = field(default_factory=lambda: Curve.const(1.0))
    T0: float = 0.0
    realized_value: float | None = None

    def norm2(self, s, t):
        """Squared L2 norm of the kernel over [s, t]."""
        if t <= s:
            return 0.0
        if self.kernel.is_constant:
            return self.kernel.values[0] ** 2 * (t - s)
        return integrate_fn(lambda x: self.kernel(x) ** 2, s, t, (self.kernel,))


@dataclass(frozen=True)
class AmbiguitySpec:
    enabled: bool = True


@dataclass(frozen=True)
class RunDefaults:
    seed: int = 20240607
    n_paths: int = 100_000
    dt: float = 1e-3
    antithetic: bool = False
    crn: bool = True


@dataclass(frozen=True)
class Scenario:
    market: MarketParams
    insurance: InsuranceParams
    insider: InsiderSpec = field(default_factory=InsiderSpec)
    ambiguity: AmbiguitySpec = field(default_factory=AmbiguitySpec)
    T: float = 1.0
    X0: float = 1.0
    run: RunDefaults = field(default_factory=RunDefaults)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True, eq=False)
class ValidatedScenario:
    """Scenario certified against every invariant, with derived curves."""

    scenario: Scenario

    def __eq__(self, other):
        return isinstance(other, ValidatedScenario) and self.scenario == other.scenario

    def __hash__(self):
        return hash(self.scenario)

    def __getattr__(self, name):
        return getattr(self.scenario, name)

    # case flags
    @property
    def is_jump(self):
        return self.scenario.insurance.jump2 is not None

    @property
    def is_large(self):
        v = self.scenario.market.varrho
        return not (v.is_constant and v.values[0] == 0.0)

    @property
    def has_insider(self):
        return self.scenario.insider.kind is not None

    @property
    def constant_params(self):
        m, i = self.scenario.market, self.scenario.insurance
        cs = [m.r, m.mu0, m.sigma, m.varrho, i.a, i.b, i.lambda_premium]
        if i.jump2 is not None:
            cs.append(i.jump2.gamma)
        return all(c.is_constant for c in cs)

    @property
    def curves(self):
        m, i = self.scenario.market, self.scenario.insurance
        cs = [m.r, m.mu0, m.sigma, m.varrho, i.a, i.b, i.lambda_premium]
        if i.jump2 is not None:
            cs.append(i.jump2.gamma)
        if self.has_insider:
            cs.append(self.scenario.insider.kernel)
        return tuple(cs)

    # derived curves
    def iota(self, t):
        m = self.scenario.market
        return (m.mu0(t) - m.r(t)) / m.sigma(t)

    def sigma_tilde(self, t):
        m = self.scenario.market
        s = m.sigma(t)
        return s - 2.0 * m.varrho(t) / s

    def premium(self, t):
        """lambda - a + rho b iota."""
        i = self.scenario.insurance
        return i.lambda_premium(t) - i.a(t) + i.rho * i.b(t) * self.iota(t)

    def c(self, t):
        i = self.scenario.insurance
        return self.premium(t) / (math.sqrt(1.0 - i.rho ** 2) * i.b(t))

    def integral(self, fn, a=0.0, b=None, explicit_time=False):
        """Integral over [a, b] of ``fn(t)`` built from the parameter curves.

        Pass ``explicit_time=True`` when ``fn`` depends on t beyond the curves.
        """
        b = self.scenario.T if b is None else b
        const = self.constant_params and not explicit_time
        return integrate_fn(fn, a, b, self.curves, const=const)


def _fail(name, t, value, message=""):
    raise ConstraintViolation(name, t, value, message)


def _first_bad(mask, grid, vals):
    idx = int(np.argmax(mask))
    return float(grid[idx]), float(vals[idx])


def validate(s: Scenario | ValidatedScenario) -> ValidatedScenario:
    """Certify ``s`` against all invariants; raise on the first breach."""
    if isinstance(s, ValidatedScenario):
        s = s.scenario
    m, ins, ind = s.market, s.insurance, s.insider
    if not (s.T > 0 and math.isfinite(s.T)):
        _fail("T>0", None, s.T)
    if not (s.X0 > 0 and math.isfinite(s.X0)):
        _fail("X0>0", None, s.X0)
    knots = [k for c in (m.r, m.mu0, m.sigma, m.varrho, ins.a, ins.b, ins.lambda_premium)
             for k in c.knots if 0 <= k <= s.T]
    grid = np.unique(np.concatenate([np.linspace(0.0, s.T, CHECK_POINTS), knots]))

    sig = m.sigma(grid)
    if np.any(~np.isfinite(sig)) or np.any(sig < EPS_SIGMA):
        _fail("sigma>=eps", *_first_bad(~(sig >= EPS_SIGMA), grid, sig))
    vr = m.varrho(grid)
    if np.any(vr < 0):
        _fail("varrho>=0", *_first_bad(vr < 0, grid, vr))
    if np.any(vr >= 0.5 * sig ** 2):
        _fail("varrho<sigma^2/2", *_first_bad(vr >= 0.5 * sig ** 2, grid, vr))
    for name, c in (("r", m.r), ("mu0", m.mu0)):
        v = c(grid)
        if np.any(~np.isfinite(v)):
            _fail(f"{name} finite", *_first_bad(~np.isfinite(v), grid, v))

    a, lam, b = ins.a(grid), ins.lambda_premium(grid), ins.b(grid)
    if np.any(a <= 0):
        _fail("a>0", *_first_bad(a <= 0, grid, a))
    if np.any(lam <= a):
        _fail("lambda>a", *_first_bad(lam <= a, grid, lam))
    if not (-1.0 < ins.rho <= 0.0):
        _fail("rho in (-1,0]", None, ins.rho)
    if np.any(b < 0):
        _fail("b>=0", *_first_bad(b < 0, grid, b))

    if m.jump1 is not None:
        _fail("jump1", None, m.jump1.intensity,
              "asset jumps are outside the supported cases (continuous, or claim jumps with b=0)")
    if ins.jump2 is not None:
        j = ins.jump2
        if j.law != "point":
            _fail("jump2.law", None, j.law, "only the unit point-mass mark law is supported")
        if not (j.intensity > 0 and math.isfinite(j.intensity)):
            _fail("jump2.intensity>0", None, j.intensity)
        g = j.gamma(grid)
        if np.any(g < EPS_GAMMA):
            _fail("gamma2>=eps", *_first_bad(g < EPS_GAMMA, grid, g))
        if np.any(b != 0):
            _fail("b=0 in jump case", *_first_bad(b != 0, grid, b),
                  "claim jumps require a pure-jump claim process (mixed cases rejected)")
        if np.any(vr != 0):
            _fail("varrho=0 in jump case", *_first_bad(vr != 0, grid, vr),
                  "the large-insurer case is continuous only")
    else:
        if np.any(b < EPS_SIGMA):
            _fail("b>=eps", *_first_bad(b < EPS_SIGMA, grid, b))
        st = sig - 2.0 * vr / sig
        d = st + sig - 2.0 * ins.rho ** 2 * sig
        if np.any(np.abs(d) < 1e-14):
            _fail("sigma_tilde+sigma-2rho^2 sigma!=0", *_first_bad(np.abs(d) < 1e-14, grid, d))

    if ind.kind is not None:
        if ind.kind not in ("brownian", "eta2"):
            _fail("insider.kind", None, ind.kind)
        if ind.kind == "brownian" and ind.source not in ("W1", "Wbar"):
            _fail("insider.source", None, ind.source)
        if ind.kind == "eta2" and ins.jump2 is None:
            _fail("insider.kind", None, ind.kind, "the claim-jump functional needs claim jumps")
        if ind.kind == "brownian" and ind.source == "Wbar" and ins.jump2 is not None:
            _fail("insider.source", None, ind.source,
                  "the claim Brownian motion is absent when b=0")
        if not (ind.T0 - s.T >= MIN_INSIDER_GAP):
            _fail("T0-T>=1e-3", None, ind.T0)
        if ind.kind == "brownian":
            kg = np.linspace(0.0, ind.T0, CHECK_POINTS)
            kv = ind.kernel(kg)
            if np.any(~np.isfinite(kv)):
                _fail("kernel finite", *_first_bad(~np.isfinite(kv), kg, kv))
            if not ind.norm2(s.T, ind.T0) > 0:
                _fail("|kernel|^2[T,T0]>0", None, ind.norm2(s.T, ind.T0))
    return ValidatedScenario(s)


# ---------------------------------------------------------------- config grammar

SECTIONS = {
    "market": {"r", "mu0", "sigma", "varrho", "jump1_intensity", "jump1_gamma", "jump1_law"},
    "insurance": {"a", "b", "lambda", "rho", "jump_intensity", "gamma2", "jump_law"},
    "insider": {"kind", "source", "kernel", "T0", "y0"},
    "ambiguity": {"enabled"},
    "run": {"T", "X0", "seed", "paths", "dt", "antithetic", "crn"},
}
REQUIRED = {("market", "r"), ("market", "mu0"), ("market", "sigma"),
            ("insurance", "a"), ("insurance", "b"), ("insurance", "lambda"), ("run", "T")}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _bool(text):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_sections(text):
    """Split config text into ``{section: {key: (value, line)}}``."""
    out = {}
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(no, f"malformed section header {raw.strip()!r}")
            current = line[1:-1].strip()
            if current not in SECTIONS:
                raise ParseError(no, f"unknown section [{current}]")
            out.setdefault(current, {})
            continue
        if "=" not in line:
            raise ParseError(no, f"expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ParseError(no, "key outside of any section")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SECTIONS[current]:
            raise UnknownKey(f"{current}.{key}")
        if key in out[current]:
            raise ParseError(no, f"duplicate key {current}.{key}")
        out[current][key] = (value, no)
    return out


def from_sections(sec) -> Scenario:
    for s_name, key in sorted(REQUIRED):
        if key not in sec.get(s_name, {}):
            raise ParseError(0, f"missing required key {s_name}.{key}")

    def get(s_name, key, conv, default=None):
        item = sec.get(s_name, {}).get(key)
        if item is None:
            return default
        value, no = item
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            raise ParseError(no, f"{s_name}.{key}: {exc}") from None

    mk = sec.get("market", {})
    jump1 = None
    if "jump1_intensity" in mk:
        jump1 = JumpSpec(get("market", "jump1_intensity", float),
                         get("market", "jump1_gamma", Curve.parse, Curve.const(1.0)),
                         get("market", "jump1_law", str, "point"))
    market = MarketParams(
        r=get("market", "r", Curve.parse),
        mu0=get("market", "mu0", Curve.parse),
        sigma=get("market", "sigma", Curve.parse),
        varrho=get("market", "varrho", Curve.parse, Curve.const(0.0)),
        jump1=jump1,
    )
    jump2 = None
    if "jump_intensity" in sec.get("insurance", {}):
        jump2 = JumpSpec(get("insurance", "jump_intensity", float),
                         get("insurance", "gamma2", Curve.parse, Curve.const(1.0)),
                         get("insurance", "jump_law", str, "point"))
    insurance = InsuranceParams(
        a=get("insurance", "a", Curve.parse),
        b=get("insurance", "b", Curve.parse),
        lambda_premium=get("insurance", "lambda", Curve.parse),
        rho=get("insurance", "rho", float, 0.0),
        jump2=jump2,
    )
    kind = get("insider", "kind", lambda v: v.strip().lower(), "none")
    if kind == "none":
        insider = InsiderSpec()
    else:
        y0 = get("insider", "y0", lambda v: None if v.strip().lower() == "none" else float(v))
        insider = InsiderSpec(kind=kind,
                              source=get("insider", "source", str.strip, "Wbar"),
                              kernel=get("insider", "kernel", Curve.parse, Curve.const(1.0)),
                              T0=get("insider", "T0", float, 0.0),
                              realized_value=y0)
    amb = AmbiguitySpec(get("ambiguity", "enabled", _bool, True))
    rd = RunDefaults()
    run = RunDefaults(seed=get("run", "seed", int, rd.seed),
                      n_paths=get("run", "paths", lambda v: int(float(v)), rd.n_paths),
                      dt=get("run", "dt", float, rd.dt),
                      antithetic=get("run", "antithetic", _bool, rd.antithetic),
                      crn=get("run", "crn", _bool, rd.crn))
    return Scenario(market, insurance, insider, amb,
                    T=get("run", "T", float), X0=get("run", "X0", float, 1.0), run=run)


def to_sections(s: Scenario):
    """Inverse of :func:`from_sections` on plain text values."""
    s = s.scenario if isinstance(s, ValidatedScenario) else s
    m, i, ind = s.market, s.insurance, s.insider
    market = {"r": m.r.text(), "mu0": m.mu0.text(), "sigma": m.sigma.text(),
              "varrho": m.varrho.text()}
    if m.jump1 is not None:
        market.update(jump1_intensity=repr(m.jump1.intensity),
                      jump1_gamma=m.jump1.gamma.text(), jump1_law=m.jump1.law)
    insurance = {"a": i.a.text(), "b": i.b.text(), "lambda": i.lambda_premium.text(),
                 "rho": repr(i.rho)}
    if i.jump2 is not None:
        insurance.update(jump_intensity=repr(i.jump2.intensity),
                         gamma2=i.jump2.gamma.text(), jump_law=i.jump2.law)
    if ind.kind is None:
        insider = {"kind": "none"}
    else:
        insider = {"kind": ind.kind, "source": ind.source, "kernel": ind.kernel.text(),
                   "T0": repr(ind.T0),
                   "y0": "none" if ind.realized_value is None else repr(ind.realized_value)}
    run = {"T": repr(s.T), "X0": repr(s.X0), "seed": str(s.run.seed),
           "paths": str(s.run.n_paths), "dt": repr(s.run.dt),
           "antithetic": str(s.run.antithetic).lower(), "crn": str(s.run.crn).lower()}
    return {"market": market, "insurance": insurance, "insider": insider,
            "ambiguity": {"enabled": str(s.ambiguity.enabled).lower()}, "run": run}


def dumps(s) -> str:
    parts = []
    for name, kv in to_sections(s).items():
        parts.append(f"[{name}]")
        parts.extend(f"{k} = {v}" for k, v in kv.items())
        parts.append("")
    return "\n".join(parts)


def loads(text: str) -> Scenario:
    return from_sections(parse_sections(text))


def load_scenario(path) -> Scenario:
    return loads(Path(path).read_text())


serialize = dumps


def apply_overrides(s, overrides):
    """Apply dotted ``section.key=value`` overrides through the config schema."""
    sec = {k: {kk: (vv, 0) for kk, vv in d.items()} for k, d in to_sections(s).items()}
    for item in overrides:
        if "=" not in item:
            raise ParseError(0, f"override {item!r} is not K=V")
        key, value = (p.strip() for p in item.split("=", 1))
        if "." not in key:
            raise UnknownKey(key)
        s_name, k = key.split(".", 1)
        if s_name not in SECTIONS or k not in SECTIONS[s_name]:
            raise UnknownKey(key)
        if s_name == "insider" and k != "kind" and sec["insider"].get("kind", ("none", 0))[0] == "none":
            sec["insider"]["kind"] = ("brownian", 0)
        sec.setdefault(s_name, {})[k] = (value, 0)
    return validate(from_sections(sec))


# ---------------------------------------------------------------- baselines

def baseline_s0(**kw) -> Scenario:
    """Constant-parameter continuous reference scenario."""
    p = dict(T=1.0, X0=1.0, r=0.03, mu0=0.08, sigma=0.2, lam=0.5, a=0.3, b=0.4, rho=0.0,
             varrho=0.0)
    unknown = set(kw) - set(p) - {"ambiguity"}
    if unknown:
        raise TypeError(f"unknown baseline parameters: {sorted(unknown)}")
    p.update(kw)
    market = MarketParams(Curve.const(p["r"]), Curve.const(p["mu0"]), Curve.const(p["sigma"]),
                          Curve.const(p["varrho"]))
    ins = InsuranceParams(Curve.const(p["a"]), Curve.const(p["b"]), Curve.const(p["lam"]),
                          float(p["rho"]))
    return Scenario(market, ins, InsiderSpec(), AmbiguitySpec(p.get("ambiguity", True)),
                    T=float(p["T"]), X0=float(p["X0"]))


def baseline_sj(**kw) -> Scenario:
    """Reference drivers with pure-jump claims (unit marks)."""
    lambar = kw.pop("lambar", 0.5)
    gamma2 = kw.pop("gamma2", 1.0)
    s = baseline_s0(b=0.0, **kw)
    ins = dataclasses.replace(s.insurance, b=Curve.const(0.0),
                              jump2=JumpSpec(lambar, Curve.const(gamma2)))
    return s.replace(insurance=ins)


def baseline_sl(varrho=0.005, **kw) -> Scenario:
    return baseline_s0(varrho=varrho, **kw)


def with_insider(s: Scenario, kind="brownian", source="Wbar", T0=2.0, kernel=1.0,
                 realized_value=None) -> Scenario:
    return s.replace(insider=InsiderSpec(kind, source, as_curve(kernel), float(T0),
                                         realized_value))


def with_ambiguity(s: Scenario, enabled: bool) -> Scenario:
    return s.replace(ambiguity=AmbiguitySpec(enabled))
