"""Information drifts, conditional densities and tilted compensators for insiders.

The insider state ``S`` used throughout is the remaining uncertainty of the
insider's statistic:

* Brownian functional: ``S_t = Y0 - int_0^t kernel dW_source``
* claim-jump functional: ``S_t = eta2_{T0} - eta2_t`` (compensated jump count)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, UnsupportedInsider
from .scenario import InsiderSpec


@dataclass(frozen=True)
class InformationDrift:
    """Drift added to (W1, W2) under the insider's filtration.

    ``phi1(t, state)`` and ``phi2(t, state)`` are vectorised in ``state``;
    ``gain(t)`` is the common factor kernel_t / |kernel|^2_[t,T0] so that
    phi_i = w_i * gain(t) * state with constant weights ``w1``, ``w2``.
    """

    kind: str
    w1: float
    w2: float
    gain: Callable

    def phi1(self, t, state):
        return self.w1 * self.gain(t) * np.asarray(state, dtype=float)

    def phi2(self, t, state):
        return self.w2 * self.gain(t) * np.asarray(state, dtype=float)


def _gain(spec: InsiderSpec):
    k = spec.kernel

    def gain(t):
        t = np.asarray(t, dtype=float)
        if k.is_constant:
            phi = k.values[0]
            out = phi / (phi * phi * (spec.T0 - t))
        else:
            tail = np.vectorize(lambda x: spec.norm2(float(x), spec.T0))(t)
            out = k(t) / tail
        return out if out.ndim else float(out)

    return gain


def _zero(t):
    t = np.asarray(t, dtype=float)
    return np.zeros(t.shape) if t.ndim else 0.0


def drift_for(spec: InsiderSpec, rho: float) -> InformationDrift:
    if spec.kind is None or spec.kind == "eta2":
        # the claim-jump functional leaves both Brownian motions untouched
        return InformationDrift("none" if spec.kind is None else "eta2", 0.0, 0.0, _zero)
    if spec.kind != "brownian":
        raise UnsupportedInsider(f"insider kind {spec.kind!r} is not supported")
    if spec.source == "Wbar":
        return InformationDrift("Wbar", rho, math.sqrt(1.0 - rho * rho), _gain(spec))
    if spec.source == "W1":
        return InformationDrift("W1", 1.0, 0.0, _gain(spec))
    raise UnsupportedInsider(f"insider source {spec.source!r} is not supported")


def donsker_conditional_density(y, running, norm_tail):
    """Gaussian density of the insider statistic at ``y`` given its running part."""
    norm_tail = np.asarray(norm_tail, dtype=float)
    if np.any(norm_tail <= 0):
        raise DomainError(f"tail norm must be positive, got {norm_tail!r}")
    d = np.asarray(y, dtype=float) - np.asarray(running, dtype=float)
    out = np.exp(-d * d / (2.0 * norm_tail)) / np.sqrt(2.0 * math.pi * norm_tail)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class TiltedCompensator:
    """Multiplier on the claim-jump intensity under the insider filtration.

    For ``eta2_future`` the intensity given ``k`` jumps remaining in (t, T0]
    is ``intensity + (k - intensity (T0 - t)) / (T0 - t) = k / (T0 - t)``.
    """

    kind: str
    T0: float = 0.0

    def intensity(self, t, remaining, base_intensity):
        if self.kind == "identity":
            return base_intensity * np.ones_like(np.asarray(remaining, dtype=float))
        left = self.T0 - np.asarray(t, dtype=float)
        compensated = np.asarray(remaining, dtype=float) - base_intensity * left
        return base_intensity + compensated / left

    def density(self, t, remaining, base_intensity):
        return self.intensity(t, remaining, base_intensity) / base_intensity


def tilted_compensator(spec: InsiderSpec) -> TiltedCompensator:
    if spec.kind == "eta2":
        return TiltedCompensator("eta2_future", spec.T0)
    return TiltedCompensator("identity")
