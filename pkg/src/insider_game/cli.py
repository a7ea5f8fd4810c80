"""Batch driver: ``insider-game solve | simulate | verify | bsde | critical-time``.

Exit codes: 0 ok, 1 failed verification, 2 mode mismatch, 3 admissibility
breach, 4 BSDE failure (shooting, regression, nested budget), 5 no bracket,
6 singular configuration, 7 grid too coarse, 9 invalid input or usage.
Errors go to stderr as ``ERROR <label>: <detail>``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import bsde, closedform, oracle, scenario
from .closedform import AffineControl, StrategyPair, constant_pair
from .errors import DomainError, GameError, InputError, ModeMismatch
from .simulate import SimConfig, estimate_J, evolve, mean_se, simulate_drivers

EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 9
COMMANDS = ("solve", "simulate", "verify", "bsde", "critical-time")
CONTROL_NAMES = ("pi", "kappa", "theta1", "theta2", "theta3", "theta4")


@dataclass
class RunManifest:
    command: str
    config: str | None
    out: str
    seed: int | None = None
    paths: int | None = None
    dt: float | None = None
    threads: int = 1
    overrides: list = field(default_factory=list)
    experimental: bool = False
    gnuplot: bool = False
    timestamp: bool = False
    extra: dict = field(default_factory=dict)

    def scenario(self):
        base = scenario.load_scenario(self.config) if self.config else scenario.baseline_s0()
        s = scenario.apply_overrides(base, self.overrides)
        run = s.run
        changes = {k: v for k, v in (("seed", self.seed), ("n_paths", self.paths), ("dt", self.dt))
                   if v is not None}
        if changes:
            s = s.replace(run=dataclasses.replace(run, **changes))
        return scenario.validate(s)

    def sim_config(self, vs, **kw):
        cfg = SimConfig.from_scenario(vs, threads=self.threads)
        return cfg.replace(**kw) if kw else cfg

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def header(self):
        if not self.timestamp:
            return []
        return [f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"ERROR Usage: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="insider-game", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config_pos", nargs="?", metavar="CONFIG", help="scenario file (same as --config)")
    p.add_argument("--config", help="scenario file; defaults to the built-in S0 baseline")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--override", action="append", default=[], metavar="K=V")
    p.add_argument("--experimental", action="store_true")
    p.add_argument("--gnuplot-script", action="store_true", help="also write plot.gp for the CSV output")
    p.add_argument("--timestamp", action="store_true", help="prepend a generation-time header line")
    p.add_argument("--strategy", default="closed",
                   help="simulate: closed | neutral | null | path to a strategy CSV")
    p.add_argument("--dump", type=int, default=0, help="simulate: write this many paths to paths.csv.gz")
    p.add_argument("--kind", default=None,
                   help="bsde: quadratic | linear; critical-time: insurance | asset")
    p.add_argument("--shooting", type=float, default=1e-3, help="bsde: shooting tolerance")
    p.add_argument("--iota", type=float, help="critical-time: asset premium (overrides config)")
    p.add_argument("--c", type=float, dest="c_premium", help="critical-time: insurance premium")
    p.add_argument("--sweep", help="critical-time: comma list of iota values")
    return p


def _write_lines(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_csv(path, header, rows, prefix=()):
    with open(path, "w", newline="") as fh:
        for line in prefix:
            fh.write(line + "\n")
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _fmt(x):
    return repr(float(x))


def _gnuplot(m, csv_name, xcol, ycols, title):
    plots = ", ".join(f"'{csv_name}' using {xcol}:{c} with lines title columnhead({c})" for c in ycols)
    _write_lines(m.path("plot.gp"), ["set datafile separator ','", "set key autotitle columnhead",
                                     f"set title '{title}'", f"plot {plots}"])


def _representative_states(vs):
    ind = vs.insider
    if ind.kind is None:
        return [0.0]
    if ind.kind == "brownian":
        sd = math.sqrt(ind.norm2(0.0, ind.T0))
    else:
        sd = math.sqrt(vs.insurance.jump2.intensity * ind.T0)
    return [-sd, 0.0, sd]


def _strategy_rows(vs, pair, n_points=11):
    rows = []
    for t in np.linspace(0.0, vs.T, n_points):
        for st in _representative_states(vs):
            ctl = pair.evaluate(np.array([t]), st)
            rows.append([_fmt(t), _fmt(st)] + [_fmt(np.ravel(ctl[k])[0]) for k in CONTROL_NAMES])
    return rows


def cmd_solve(m: RunManifest) -> int:
    vs = m.scenario()
    pair, report = closedform.solve(vs, experimental=m.experimental)
    _write_csv(m.path("strategy.csv"), ["t", "state"] + list(CONTROL_NAMES),
               _strategy_rows(vs, pair), m.header())
    lines = m.header() + [f"mode={closedform.describe_mode(vs)}"] + report.lines()
    _write_lines(m.path("value.txt"), lines)
    if m.gnuplot:
        _gnuplot(m, "strategy.csv", 1, (3, 4, 5, 6), "closed-form strategies")
    print("\n".join(lines))
    return 0


def _read_strategy_csv(path):
    """Piecewise-constant-in-t affine controls fitted per time row across states."""
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    head, body = rows[0], rows[1:]
    if not body:
        raise DomainError(f"strategy file {path} has no rows")
    col = {k: i for i, k in enumerate(head)}
    for k in ("t",) + CONTROL_NAMES:
        if k not in col:
            raise DomainError(f"strategy file {path} lacks column {k!r}")
    data = np.array([[float(x) for x in r] for r in body])
    times = np.unique(data[:, col["t"]])
    state = data[:, col["state"]] if "state" in col else np.zeros(len(data))
    base = np.zeros((6, times.size))
    slope = np.zeros((6, times.size))
    for i, t in enumerate(times):
        sel = data[:, col["t"]] == t
        for j, k in enumerate(CONTROL_NAMES):
            y = data[sel, col[k]]
            if np.ptp(state[sel]) > 0:
                slope[j, i], base[j, i] = np.polyfit(state[sel], y, 1)
            else:
                base[j, i] = y.mean()

    def lookup(arr):
        def f(t):
            k = np.clip(np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1,
                        0, times.size - 1)
            return arr[k]
        return f

    ctl = [AffineControl(lookup(base[j]), lookup(slope[j])) for j in range(6)]
    return StrategyPair(ctl[0], ctl[1], tuple(ctl[2:]), "csv", "none")


def _strategy_for(m, vs):
    src = m.extra.get("strategy", "closed")
    if src == "null":
        return constant_pair(mode="null")
    if src in ("closed", "neutral"):
        pair, _ = closedform.solve(vs, experimental=m.experimental)
        return pair.neutralised() if src == "neutral" else pair
    return _read_strategy_csv(src)


def cmd_simulate(m: RunManifest) -> int:
    vs = m.scenario()
    pair = _strategy_for(m, vs)
    cfg = m.sim_config(vs)
    gen = pair.theta if vs.ambiguity.enabled else None
    bundle = evolve(simulate_drivers(vs, cfg), pair, gen)
    rows = []
    for name, samples in (("J", bundle.j_samples()), ("ln_x_T", bundle.ln_x),
                          ("eps_T", bundle.eps), ("eps_weighted_penalty", bundle.penalty_integral)):
        est, se = mean_se(samples, cfg.antithetic)
        rows.append([name, _fmt(est), _fmt(se), cfg.n_paths, _fmt(cfg.dt)])
    _write_csv(m.path("mc.csv"), ["quantity", "estimate", "stderr", "n_paths", "dt"], rows, m.header())
    if m.extra.get("dump"):
        bundle.dump_csv(m.path("paths.csv.gz"), m.extra["dump"])
    if m.gnuplot and m.extra.get("dump"):
        _gnuplot(m, "paths.csv.gz", 1, (2,), "sample paths")
    for r in rows:
        print(f"{r[0]}={r[1]} se={r[2]}")
    return 0


def _verify_rows(m, vs):
    """Run every applicable oracle check; yields (check, value, stderr, threshold, status)."""
    cfg = m.sim_config(vs)
    rows = []
    try:
        pair, report = closedform.solve(vs, experimental=m.experimental)
    except ModeMismatch as exc:
        return [("closed_form", "nan", "nan", "", f"SKIP {exc}")]
    v = pair.theta if vs.ambiguity.enabled else None

    if report.analytic is not None:
        est, se = estimate_J(vs, pair, v, cfg)
        ok = abs(est - report.analytic) <= 3 * se
        rows.append(("mc_value", est, se, f"|J-{report.analytic!r}|<=3se", "PASS" if ok else "FAIL"))

    if not vs.has_insider and vs.constant_params:
        try:
            res = oracle.saddle_search(vs, cfg=cfg)
            u_ref = (float(pair.pi(0.0)), float(pair.kappa(0.0)))
            v_ref = (float(pair.theta[0](0.0)), float(pair.theta[3 if vs.is_jump else 1](0.0)))
            du, dv = res.gap_to(u_ref, v_ref) if vs.ambiguity.enabled else (res.gap_to(u_ref, res.v_hat)[0], 0.0)
            step = oracle.SaddleGrid().pi_range[2]
            ok = du <= step + 1e-12 and dv <= step + 1e-12
            rows.append(("saddle_location", max(du, dv), "", f"<= {step}", "PASS" if ok else "FAIL"))
            if vs.ambiguity.enabled:
                ok = abs(res.value_gap) <= 3 * res.gap_se + 1e-12
                rows.append(("saddle_value_gap", res.value_gap, res.gap_se, "<=3se", "PASS" if ok else "FAIL"))
        except GameError as exc:
            rows.append(("saddle_location", "nan", "", "", f"FAIL {exc.label}: {exc}"))

    names = ["pi", "kappa"] + (["theta1", "theta4" if vs.is_jump else "theta2"] if vs.ambiguity.enabled else [])
    for name in names:
        est, se = oracle.gateaux_check(vs, pair, v, {name: 1.0}, cfg)
        ok = abs(est) <= 3 * se
        rows.append((f"gateaux_{name}", est, se, "|d|<=3se", "PASS" if ok else "FAIL"))

    if v is not None:
        rep = oracle.martingale_suite(vs, v, cfg)
        rows.append(("martingale_mean", float(np.max(np.abs(rep.means - 1) / np.maximum(rep.stderr, 1e-300))),
                     "", "<=3se", "PASS" if rep.mean_ok.all() else "FAIL"))
        rows.append(("martingale_second_moment", "", "", "nondecreasing",
                     "PASS" if rep.monotone_ok else "FAIL"))
    return rows


def cmd_verify(m: RunManifest) -> int:
    vs = m.scenario()
    rows = _verify_rows(m, vs)
    out = [[r[0], r[1] if isinstance(r[1], str) else _fmt(r[1]),
            r[2] if isinstance(r[2], str) else _fmt(r[2]), r[3], r[4]] for r in rows]
    _write_csv(m.path("verify.csv"), ["check", "value", "stderr", "threshold", "status"], out, m.header())
    failed = [r for r in rows if r[4].startswith("FAIL")]
    summary = m.header() + [f"{r[0]}: {r[4]}" for r in rows]
    summary.append(f"overall: {'FAIL' if failed else 'PASS'} ({len(rows) - len(failed)}/{len(rows)})")
    _write_lines(m.path("verify_summary.txt"), summary)
    print("\n".join(summary))
    return EXIT_VERIFY_FAILED if failed else 0


def cmd_bsde(m: RunManifest) -> int:
    vs = m.scenario()
    kind = m.extra.get("kind") or "quadratic"
    if kind == "linear":
        sol = bsde.linear_bsde_wealth(vs, m.sim_config(vs))
    elif kind == "quadratic":
        kw = {"threads": m.threads}
        kw["n_paths"] = m.paths if m.paths is not None else 200_000
        kw["dt"] = m.dt if m.dt is not None else vs.T / 500
        cfg = SimConfig.from_scenario(vs, **kw)
        sol = bsde.quadratic_bsde_solve(vs, cfg, m.extra.get("shooting", 1e-3))
    else:
        raise DomainError(f"unknown BSDE kind {kind!r} (expected quadratic or linear)")
    sol.dump_csv(m.path("bsde.csv"))
    text = sol.diagnostics_text()
    _write_lines(m.path("diagnostics.txt"), m.header() + text.rstrip("\n").splitlines())
    if kind == "quadratic":
        pair = bsde.recover_strategies(sol, vs)
        _write_csv(m.path("strategy.csv"), ["t", "state"] + list(CONTROL_NAMES),
                   _strategy_rows(vs, pair), m.header())
    if m.gnuplot:
        _gnuplot(m, "bsde.csv", 1, (2, 3, 4), "BSDE solution means")
    print(text, end="")
    return 0


def cmd_critical_time(m: RunManifest) -> int:
    kind = m.extra.get("kind") or "insurance"
    if kind not in ("insurance", "asset"):
        raise DomainError(f"unknown insider kind {kind!r} (expected insurance or asset)")
    iota, c = m.extra.get("iota"), m.extra.get("c")
    T = 1.0
    if iota is None or c is None:
        vs = m.scenario()
        T = vs.T
        i = vs.insurance
        iota = float(vs.iota(0.0)) if iota is None else iota
        c = float((i.lambda_premium(0.0) - i.a(0.0)) / i.b(0.0)) if c is None else c
    sweep = m.extra.get("sweep")
    if sweep:
        try:
            iotas = [float(x) for x in sweep.split(",") if x.strip()]
        except ValueError as exc:
            raise DomainError(f"bad sweep list {sweep!r}") from exc
        rows = []
        for io in iotas:
            t0, res = closedform.critical_time_from(io, c, T, kind)
            rows.append([_fmt(io), _fmt(c), _fmt(t0), _fmt(res)])
        _write_csv(m.path("critical_time.csv"), ["iota", "c", "T0_star", "residual"], rows, m.header())
        if m.gnuplot:
            _gnuplot(m, "critical_time.csv", 1, (3,), "critical future time")
        for r in rows:
            print(f"iota={r[0]} T0*={r[2]} residual={r[3]}")
        return 0
    t0, res = closedform.critical_time_from(iota, c, T, kind)
    lines = m.header() + [f"T0*={t0!r}", f"residual={res!r}"]
    _write_lines(m.path("critical_time.txt"), lines)
    print("\n".join(lines))
    return 0


DISPATCH = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify,
            "bsde": cmd_bsde, "critical-time": cmd_critical_time}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config and args.config_pos and args.config != args.config_pos:
        sys.stderr.write("ERROR Usage: config given twice with different values\n")
        return EXIT_USAGE
    m = RunManifest(command=args.command, config=args.config or args.config_pos, out=args.out,
                    seed=args.seed, paths=args.paths, dt=args.dt, threads=args.threads,
                    overrides=args.override, experimental=args.experimental,
                    gnuplot=args.gnuplot_script, timestamp=args.timestamp,
                    extra={"strategy": args.strategy, "dump": args.dump, "kind": args.kind,
                           "shooting": args.shooting, "iota": args.iota, "c": args.c_premium,
                           "sweep": args.sweep})
    try:
        return DISPATCH[args.command](m)
    except GameError as exc:
        sys.stderr.write(f"ERROR {exc.label}: {exc.detail()}\n")
        return exc.code
    except OSError as exc:
        sys.stderr.write(f"ERROR {InputError.label}: {exc}\n")
        return InputError.code


if __name__ == "__main__":
    sys.exit(main())
