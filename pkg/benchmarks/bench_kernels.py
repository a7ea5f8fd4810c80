"""Time the numba and numpy backends on the fused path kernel and the Gram kernel.

    python3 benchmarks/bench_kernels.py [--paths N] [--steps K] [--repeat R]

Both backends run on identical inputs; results are checked for agreement
before timings are reported.
"""
import argparse
import time

import numpy as np

from insider_game import _kernels as K
from insider_game import closedform as cf
from insider_game import scenario as sc
from insider_game.simulate import SimConfig, evolve, simulate_drivers


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_paths(name, s, n_paths, dt, repeat):
    vs = sc.validate(s)
    pair, _ = cf.solve(vs)
    rows = []
    results = {}
    for use in ("numpy", "numba"):
        if use == "numba" and not K.HAVE_NUMBA:
            continue
        cfg = SimConfig(n_paths=n_paths, dt=dt, backend=use)
        bundle = simulate_drivers(vs, cfg)
        bundle.drivers(0)  # warm the driver cache path and any JIT compile
        evolve(bundle, pair, pair.theta)
        t, b = best_of(lambda: evolve(bundle, pair, pair.theta), repeat)
        t_rng, _ = best_of(lambda: [bundle.drivers(i) for i in range(bundle.n_blocks)], repeat)
        results[use] = b.j_samples()
        rows.append((name, use, n_paths, int(round(vs.T / dt)), t, max(t - t_rng, 0.0)))
    if len(results) == 2:
        np.testing.assert_allclose(results["numpy"], results["numba"], rtol=1e-12, atol=1e-12)
    return rows


def bench_gram(n_paths, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, n_paths))
    basis = np.stack([np.ones(n_paths), x[0], x[1], x[0] ** 2, x[0] * x[1], x[1] ** 2,
                      x[0] ** 3, x[0] ** 2 * x[1], x[0] * x[1] ** 2, x[1] ** 3])
    y = rng.standard_normal(n_paths)
    rows = []
    ref = None
    for use in ("numpy", "numba"):
        if use == "numba" and not K.HAVE_NUMBA:
            continue
        K.gram(basis, y, use=use)
        t, out = best_of(lambda: K.gram(basis, y, use=use), repeat)
        if ref is None:
            ref = out
        else:
            np.testing.assert_allclose(out[0], ref[0], rtol=1e-9)
        rows.append(("gram 10-term", use, n_paths, 1, t, t))
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args()
    rows = []
    rows += bench_paths("S0 robust", sc.baseline_s0(), a.paths, a.dt, a.repeat)
    rows += bench_paths("S0 + insider", sc.with_insider(sc.baseline_s0()), a.paths, a.dt, a.repeat)
    rows += bench_paths("SJ robust", sc.baseline_sj(), a.paths, a.dt, a.repeat)
    rows += bench_gram(200_000, a.repeat)
    print(f"{'case':<16}{'backend':<8}{'paths':>9}{'steps':>7}{'total s':>10}{'kernel s':>10}")
    for name, use, n, k, t, tk in rows:
        print(f"{name:<16}{use:<8}{n:>9}{k:>7}{t:>10.3f}{tk:>10.3f}")
    by_case = {}
    for name, use, *_, t, tk in rows:
        by_case.setdefault(name, {})[use] = (t, tk)
    for name, d in by_case.items():
        if len(d) == 2:
            (a, ak), (b, bk) = d["numpy"], d["numba"]
            print(f"speedup {name}: total {a / b:.2f}x, kernel {ak / max(bk, 1e-12):.2f}x")


if __name__ == "__main__":
    main()
