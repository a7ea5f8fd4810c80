"""High-precision reference values derived from first principles with mpmath.

Nothing here imports the package. Constant-control saddles come from
root-finding on the gradient of the pointwise Hamiltonian; the insider value
comes from a Riccati system for E[sqrt(pricing kernel) | Y0]; the critical
horizon is a root of (insider robust value) - (public neutral value).
Run as a script to print the values frozen in ``frozen_values.py``.
"""
import mpmath as mp

mp.mp.dps = 30

S0 = dict(T=1, X0=1, r=mp.mpf("0.03"), mu0=mp.mpf("0.08"), sigma=mp.mpf("0.2"),
          lam=mp.mpf("0.5"), a=mp.mpf("0.3"), b=mp.mpf("0.4"), rho=mp.mpf(0))


def hamiltonian(p, pi, kappa, th1, th2, varrho=0):
    """Q-drift of ln X plus penalty rate, constant controls, continuous case."""
    rho = p["rho"]
    srho = mp.sqrt(1 - rho ** 2)
    sig, b = p["sigma"], p["b"]
    vol1 = sig * pi - rho * b * kappa
    vol2 = -srho * b * kappa
    drift = (p["r"] + (p["mu0"] + varrho * pi - p["r"]) * pi + (p["lam"] - p["a"]) * kappa
             - (vol1 ** 2 + vol2 ** 2) / 2)
    return drift + vol1 * th1 + vol2 * th2 + (th1 ** 2 + th2 ** 2) / 2


def _grad(f, x):
    return [mp.diff(lambda *v: f(*v), x, tuple(int(i == j) for j in range(len(x))))
            for i in range(len(x))]


def robust_saddle(p, varrho=0):
    h = lambda a, b_, c, d: hamiltonian(p, a, b_, c, d, varrho)  # noqa: E731
    x = mp.findroot(lambda *v: _grad(h, list(v)), (1, 1, 0, 0))
    x = [x[i] for i in range(4)]
    return x, p["T"] * h(*x) + mp.log(p["X0"])


def neutral_max(p, varrho=0):
    h = lambda a, b_: hamiltonian(p, a, b_, 0, 0, varrho)  # noqa: E731
    x = mp.findroot(lambda *v: _grad(h, list(v)), (1, 1))
    x = [x[0], x[1]]
    return x, p["T"] * h(*x) + mp.log(p["X0"])


def jump_saddle(lam=mp.mpf("0.5"), a=mp.mpf("0.3"), gamma=1, intensity=mp.mpf("0.5")):
    """Claim-only insurance line (b=0): kappa and the jump generator theta4."""
    def h(k, t4):
        return ((lam - a) * k + k * gamma * intensity + intensity * (1 + t4) * mp.log(1 - k * gamma)
                + intensity * ((1 + t4) * mp.log(1 + t4) - t4))
    x = mp.findroot(lambda k, t4: _grad(h, [k, t4]), (mp.mpf("0.1"), mp.mpf("0.1")))
    neutral = mp.findroot(lambda k: mp.diff(lambda kk: h(kk, 0), k), mp.mpf("0.2"))
    return x[0], x[1], neutral


def riccati_insider_value(iota, c, r, T, T0, X0=1):
    """Robust value with a unit-kernel insider on the insurance noise (rho=0).

    ln E[sqrt Pi(t,T) | S_t = s] = A + B s + C s^2 / 2 along the insider
    state dS = -(dW + S/(T0-t) dt); the coefficients solve a Riccati system
    backward from zero at T. V = ln X0 + rT + iota^2 T/4 - 2A(0) - C(0) T0.
    """
    def rhs(t, y):
        A, B, C = y
        g = 1 / (T0 - t)
        return [c * B / 2 - C / 2 - B ** 2 / 2 + c ** 2 / 8,
                c * C / 2 + g * B / 2 - B * C - c * g / 4,
                g * C - C ** 2 + g ** 2 / 4]
    # integrate in reversed time u = T - t
    sol = mp.odefun(lambda u, y: [-v for v in rhs(T - u, y)], 0, [0, 0, 0])
    A, B, C = sol(T)
    return mp.log(X0) + r * T + iota ** 2 * T / 4 - 2 * A - C * T0


def neutral_insider_gain(T, T0):
    """E int |phi|^2 / 2 with phi = S/(T0-t) and Var S_t = T0 - t."""
    return mp.quad(lambda t: (T0 - t) / (T0 - t) ** 2 / 2, [0, T])


def critical_horizon(iota, c, r, T=1):
    neutral_public = r * T + (iota ** 2 + c ** 2) * T / 2
    f = lambda T0: riccati_insider_value(iota, c, r, T, T0) - neutral_public  # noqa: E731
    lo, hi = mp.mpf(T) + mp.mpf("0.01"), mp.mpf(50)
    for _ in range(60):
        mid = (lo + hi) / 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def all_values():
    p = dict(S0)
    (pi, ka, t1, t2), V = robust_saddle(p)
    (npi, nka), Vn = neutral_max(p)
    iota = (p["mu0"] - p["r"]) / p["sigma"]
    c = (p["lam"] - p["a"]) / p["b"]
    Vins = riccati_insider_value(iota, c, p["r"], 1, 2)
    k, t4, kn = jump_saddle()
    (lpi, lka), Vl = neutral_max(p, varrho=mp.mpf("0.005"))
    return {
        "S0_robust": (pi, ka, t1, t2, V),
        "S0_neutral": (npi, nka, Vn),
        "insider_insurance_dV": Vins - V,
        "insider_neutral_dV": neutral_insider_gain(1, 2),
        "SJ": (k, t4, kn),
        "SL_neutral": (lpi, lka, Vl),
        "critical_T0": critical_horizon(iota, c, p["r"]),
    }


if __name__ == "__main__":
    for key, val in all_values().items():
        if isinstance(val, tuple):
            print(key, [mp.nstr(v, 20) for v in val])
        else:
            print(key, mp.nstr(val, 20))
