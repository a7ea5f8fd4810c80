"""Hot loops: the fused wealth/density path kernel and small regression helpers.

Two interchangeable backends share one signature. The numba one is used
unless ``INSIDER_GAME_NO_NUMBA`` is set to a non-empty value other than ``0``
(or numba is not importable).
"""
from __future__ import annotations

import math
import os

import numpy as np

# rows of the per-step parameter matrix
R, MU0, VARRHO, SIGMA, A, B, LAM, GAMMA2, KERNEL, GAIN, TLEFT = range(11)
N_PARAMS = 11

# rows of the per-path output matrix
OUT_LNX, OUT_LNEPS, OUT_INT_EG, OUT_INT_EPS, OUT_JUMPS = range(5)
N_OUT = 5

# rows of the checkpoint tensor
CK_LNX, CK_LNEPS, CK_W1H, CK_W2H, CK_W1, CK_W2, CK_STATE, CK_JUMPS = range(8)
N_CK = 8

STATE_NONE, STATE_BROWNIAN, STATE_ETA2 = 0, 1, 2
OK, BREACH_ADMISSIBILITY, BREACH_GENERATOR = 0, 1, 2
ADMISSIBILITY_EPS = 1e-6


def _flag_disabled():
    v = os.environ.get("INSIDER_GAME_NO_NUMBA", "")
    return v not in ("", "0")


def path_kernel_numpy(dw1, dw2, dn, state0, params, base, slope, ck_steps,
                      rho, lamb, dt, w1, w2, state_kind, jumps, out, ck):
    """Evolve log-wealth and log-density over one block of paths.

    ``dw1``/``dw2`` are H-coordinate Brownian increments of shape
    (n_steps, n_paths); ``dn`` holds claim counts (same shape, or empty
    when ``jumps`` is false). Controls at step k are
    ``base[:, k] + slope[:, k] * S`` with S the insider state before the step.
    Returns (status, path, step) of the first breach, or (0, -1, -1).
    """
    n_steps, n = dw1.shape
    srho = math.sqrt(1.0 - rho * rho)
    lnx = np.zeros(n)
    lneps = np.zeros(n)
    w1h = np.zeros(n)
    w2h = np.zeros(n)
    ww1 = np.zeros(n)
    ww2 = np.zeros(n)
    s = state0.astype(float).copy()
    int_eg = np.zeros(n)
    int_eps = np.zeros(n)
    count = np.zeros(n)
    ci = 0
    if ci < ck_steps.size and ck_steps[ci] == 0:
        ck[:, ci] = (lnx, lneps, w1h, w2h, ww1, ww2, s, count)
        ci += 1
    for k in range(n_steps):
        p = params[:, k]
        pi = base[0, k] + slope[0, k] * s
        ka = base[1, k] + slope[1, k] * s
        th1 = base[2, k] + slope[2, k] * s
        th2 = base[3, k] + slope[3, k] * s
        th4 = base[5, k] + slope[5, k] * s
        ph1 = w1 * p[GAIN] * s
        ph2 = w2 * p[GAIN] * s
        d1h = dw1[k]
        d2h = dw2[k]
        d1 = d1h + ph1 * dt
        d2 = d2h + ph2 * dt
        sig, b = p[SIGMA], p[B]
        drift = (p[R] + (p[MU0] + p[VARRHO] * pi - p[R]) * pi + (p[LAM] - p[A]) * ka
                 - 0.5 * sig * sig * pi * pi + rho * sig * b * pi * ka - 0.5 * b * b * ka * ka)
        dlnx = drift * dt + (sig * pi - rho * b * ka) * d1 - srho * b * ka * d2
        dlne = -0.5 * (th1 * th1 + th2 * th2) * dt + th1 * d1h + th2 * d2h
        g = 0.5 * (th1 * th1 + th2 * th2)
        if jumps:
            if state_kind == STATE_ETA2:
                gh = lamb + s / p[TLEFT]
            else:
                gh = np.full(n, lamb)
            kg = ka * p[GAMMA2]
            code = np.where((kg >= 1.0 - ADMISSIBILITY_EPS) & (gh > 1e-12), BREACH_ADMISSIBILITY,
                            np.where(th4 <= -1.0, BREACH_GENERATOR, OK))
            if code.any():
                j = int(np.argmax(code != OK))
                return int(code[j]), j, k
            c = dn[k]
            dlnx = dlnx + kg * lamb * dt + c * np.log(np.maximum(1.0 - kg, 1e-300))
            dlne = dlne + c * np.log1p(th4) - th4 * gh * dt
            g = g + ((1.0 + th4) * np.log1p(th4) - th4) * gh
            count += c
        e0 = np.exp(lneps)
        lnx += dlnx
        lneps += dlne
        e1 = np.exp(lneps)
        int_eg += 0.5 * (e0 + e1) * g * dt
        int_eps += 0.5 * (e0 + e1) * dt
        w1h += d1h
        w2h += d2h
        ww1 += d1
        ww2 += d2
        if state_kind == STATE_BROWNIAN:
            s = s - p[KERNEL] * (w1 * d1h + w2 * d2h + p[GAIN] * s * dt)
        elif state_kind == STATE_ETA2:
            s = s - dn[k] + lamb * dt
        if ci < ck_steps.size and ck_steps[ci] == k + 1:
            ck[:, ci] = (lnx, lneps, w1h, w2h, ww1, ww2, s, count)
            ci += 1
    out[OUT_LNX] = lnx
    out[OUT_LNEPS] = lneps
    out[OUT_INT_EG] = int_eg
    out[OUT_INT_EPS] = int_eps
    out[OUT_JUMPS] = count
    return OK, -1, -1


def _path_kernel_scalar(dw1, dw2, dn, state0, params, base, slope, ck_steps,
                        rho, lamb, dt, w1, w2, state_kind, jumps, out, ck):
    n_steps, n = dw1.shape
    srho = math.sqrt(1.0 - rho * rho)
    lnx = np.zeros(n)
    lneps = np.zeros(n)
    eps = np.ones(n)
    w1h = np.zeros(n)
    w2h = np.zeros(n)
    ww1 = np.zeros(n)
    ww2 = np.zeros(n)
    s = state0.copy()
    int_eg = np.zeros(n)
    int_eps = np.zeros(n)
    count = np.zeros(n)
    ci = 0
    if ci < ck_steps.size and ck_steps[ci] == 0:
        for j in range(n):
            ck[6, ci, j] = s[j]
            ck[7, ci, j] = 0.0
            for q in range(6):
                ck[q, ci, j] = 0.0
        ci += 1
    for k in range(n_steps):
        r = params[0, k]
        mu0 = params[1, k]
        varrho = params[2, k]
        sig = params[3, k]
        prem = params[6, k] - params[4, k]
        b = params[5, k]
        gam = params[7, k]
        kern = params[8, k]
        gain = params[9, k]
        tleft = params[10, k]
        for j in range(n):
            sj = s[j]
            pi = base[0, k] + slope[0, k] * sj
            ka = base[1, k] + slope[1, k] * sj
            th1 = base[2, k] + slope[2, k] * sj
            th2 = base[3, k] + slope[3, k] * sj
            th4 = base[5, k] + slope[5, k] * sj
            d1h = dw1[k, j]
            d2h = dw2[k, j]
            d1 = d1h + w1 * gain * sj * dt
            d2 = d2h + w2 * gain * sj * dt
            drift = (r + (mu0 + varrho * pi - r) * pi + prem * ka
                     - 0.5 * sig * sig * pi * pi + rho * sig * b * pi * ka - 0.5 * b * b * ka * ka)
            dlnx = drift * dt + (sig * pi - rho * b * ka) * d1 - srho * b * ka * d2
            dlne = -0.5 * (th1 * th1 + th2 * th2) * dt + th1 * d1h + th2 * d2h
            g = 0.5 * (th1 * th1 + th2 * th2)
            if jumps:
                if state_kind == 2:
                    gh = lamb + sj / tleft
                else:
                    gh = lamb
                kg = ka * gam
                # step-major scan: the first hit is the earliest step, lowest path
                if kg >= 1.0 - 1e-6 and gh > 1e-12:
                    return 1, j, k
                if th4 <= -1.0:
                    return 2, j, k
                c = dn[k, j]
                dlnx += kg * lamb * dt + c * math.log(max(1.0 - kg, 1e-300))
                dlne += c * math.log1p(th4) - th4 * gh * dt
                g += ((1.0 + th4) * math.log1p(th4) - th4) * gh
                count[j] += c
            e0 = eps[j]
            lnx[j] += dlnx
            lneps[j] += dlne
            e1 = math.exp(lneps[j])
            eps[j] = e1
            int_eg[j] += 0.5 * (e0 + e1) * g * dt
            int_eps[j] += 0.5 * (e0 + e1) * dt
            w1h[j] += d1h
            w2h[j] += d2h
            ww1[j] += d1
            ww2[j] += d2
            if state_kind == 1:
                s[j] = sj - kern * (w1 * d1h + w2 * d2h + gain * sj * dt)
            elif state_kind == 2:
                s[j] = sj - dn[k, j] + lamb * dt
        if ci < ck_steps.size and ck_steps[ci] == k + 1:
            for j in range(n):
                ck[0, ci, j] = lnx[j]
                ck[1, ci, j] = lneps[j]
                ck[2, ci, j] = w1h[j]
                ck[3, ci, j] = w2h[j]
                ck[4, ci, j] = ww1[j]
                ck[5, ci, j] = ww2[j]
                ck[6, ci, j] = s[j]
                ck[7, ci, j] = count[j]
            ci += 1
    for j in range(n):
        out[0, j] = lnx[j]
        out[1, j] = lneps[j]
        out[2, j] = int_eg[j]
        out[3, j] = int_eps[j]
        out[4, j] = count[j]
    return 0, -1, -1


def gram_numpy(basis, target):
    """Normal equations X'X and X'y for a (n_basis, n_paths) design."""
    return basis @ basis.T, basis @ target


def _gram_scalar(basis, target):
    m, n = basis.shape
    xtx = np.zeros((m, m))
    xty = np.zeros(m)
    for j in range(n):
        for a in range(m):
            va = basis[a, j]
            xty[a] += va * target[j]
            for c in range(a, m):
                xtx[a, c] += va * basis[c, j]
    for a in range(m):
        for c in range(a):
            xtx[a, c] = xtx[c, a]
    return xtx, xty


try:
    if _flag_disabled():
        raise ImportError("numba disabled by INSIDER_GAME_NO_NUMBA")
    from numba import njit

    path_kernel_numba = njit(nogil=True, cache=True)(_path_kernel_scalar)
    gram_numba = njit(nogil=True, cache=True)(_gram_scalar)
    HAVE_NUMBA = True
except ImportError:
    path_kernel_numba = None
    gram_numba = None
    HAVE_NUMBA = False


def backend():
    return "numba" if HAVE_NUMBA and not _flag_disabled() else "numpy"


def path_kernel(*args, use=None):
    use = use or backend()
    if use == "numba":
        if path_kernel_numba is None:
            raise RuntimeError("numba backend requested but unavailable")
        return path_kernel_numba(*args)
    return path_kernel_numpy(*args)


def gram(basis, target, use=None):
    # BLAS matmul beats the compiled loop here, so numba only runs when asked for
    if use == "numba" and gram_numba is not None:
        return gram_numba(np.ascontiguousarray(basis), np.ascontiguousarray(target))
    return gram_numpy(basis, target)
