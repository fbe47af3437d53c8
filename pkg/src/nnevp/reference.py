"""Analytic ground-truth laws: power-law viscoplasticity, Johnson-Cook
hardening and the Hall-Petch grain-size law.

The flow-model classes at the bottom plug these laws into the material-point
solver; they share the ``resistance`` / ``flow`` interface with the neural
flow model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import autodiff as ad
from . import tensor as tn


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PowerLawParams:
    n: float = 10.0
    eps_dot_0: float = 1e-3  # 1/s
    sigma_y: float = 100.0  # MPa

    def __post_init__(self):
        if self.n < 1.0:
            raise DomainError(f"rate-sensitivity exponent must be >= 1, got {self.n}")
        if self.eps_dot_0 <= 0.0 or self.sigma_y <= 0.0:
            raise DomainError("eps_dot_0 and sigma_y must be positive")


@dataclass(frozen=True)
class JohnsonCookParams:
    """Johnson-Cook hardening constants; defaults are the Cu values."""

    A: float = 90.0
    B: float = 292.0
    C: float = 0.31
    m: float = 0.025
    n_hard: float = 1.09
    r_star: float = 1e-3
    T: float = 293.0
    T0: float = 293.0
    Tm: float = 1356.0

    def __post_init__(self):
        if self.A < 0.0 or self.B < 0.0 or self.n_hard <= 0.0 or self.r_star <= 0.0:
            raise DomainError("Johnson-Cook requires A >= 0, B >= 0, n_hard > 0, r_star > 0")
        if not self.Tm > self.T0:
            raise DomainError("melting temperature must exceed the reference temperature")

    @property
    def thermal_factor(self) -> float:
        t_star = (self.T - self.T0) / (self.Tm - self.T0)
        if t_star <= 0.0:
            return 1.0
        return 1.0 - t_star ** self.m


@dataclass(frozen=True)
class HallPetchParams:
    H: float = 0.2
    mu: float = 48_500.0  # MPa
    b: float = 2.56e-4  # Burgers vector, um
    p: float = 0.5

    def __post_init__(self):
        if min(self.H, self.mu, self.b, self.p) <= 0.0:
            raise DomainError("Hall-Petch parameters must all be positive")


def r_jc(r, p: JohnsonCookParams, r_dot_ratio: float = 1.0):
    """Johnson-Cook flow stress [A + B r^n][1 + C ln(ratio)][1 - T*^m].

    ``r_dot_ratio`` is the plastic strain rate over the reference rate.
    """
    if r_dot_ratio <= 0.0:
        raise DomainError(f"strain-rate ratio must be positive, got {r_dot_ratio}")
    rv = ad.value(r)
    if rv < 0.0:
        raise DomainError(f"accumulated plastic strain must be >= 0, got {rv}")
    factor = (1.0 + p.C * math.log(r_dot_ratio)) * p.thermal_factor
    return factor * (p.A + p.B * ad.power(r, p.n_hard))


def hall_petch_stress(d_grain: float, p: HallPetchParams) -> float:
    """H mu b^p / d^p; p = 0.5 gives the classic inverse square root."""
    if d_grain <= 0.0:
        raise DomainError(f"grain size must be positive, got {d_grain}")
    return p.H * p.mu * p.b ** p.p / d_grain ** p.p


def flow_rate_power(sigma: tn.SymTensor3, r_total, p: PowerLawParams) -> list:
    """3/2 eps0 (s_eq/R)^n dev(sigma)/s_eq, zero at s_eq == 0."""
    if ad.value(r_total) <= 0.0:
        raise DomainError("flow resistance must be positive")
    dev = tn.deviator(sigma)
    s_eq = ad.sqrt(1.5 * tn.norm_squared(dev))
    if ad.value(s_eq) == 0.0:
        return tn.zeros()
    ratio = s_eq / r_total
    k = (1.5 * p.eps_dot_0) * ad.power(ratio, p.n) / s_eq
    return [k * d for d in dev]


def dual_potential_power(sigma_eq, r_total, p: PowerLawParams):
    """Dual potential R eps0/(n+1) (s_eq/R)^(n+1).

    The leading R makes its stress gradient equal ``flow_rate_power``.
    """
    if ad.value(r_total) <= 0.0:
        raise DomainError("flow resistance must be positive")
    x = ad.absolute(sigma_eq / r_total)
    return (p.eps_dot_0 / (p.n + 1.0)) * r_total * ad.power(x, p.n + 1.0)


# ------------------------------------------------------------------ flow models
class PowerLawFlow:
    """Perfect viscoplasticity: constant resistance sigma_y."""

    def __init__(self, params: PowerLawParams):
        self.params = params

    def resistance(self, r):
        return self.params.sigma_y

    def flow(self, sigma, resistance) -> list:
        return flow_rate_power(sigma, resistance, self.params)


class JohnsonCookFlow:
    """Power-law flow rule with Johnson-Cook isotropic hardening.

    ``offset`` adds a constant to the resistance; the Hall-Petch synthetic
    datasets use it for the grain-size contribution.
    """

    def __init__(self, hardening: JohnsonCookParams, power: PowerLawParams,
                 rate_ratio: float = 1.0, offset: float = 0.0):
        self.hardening = hardening
        self.power = power
        self.rate_ratio = rate_ratio
        self.offset = offset

    def resistance(self, r):
        return r_jc(r, self.hardening, self.rate_ratio) + self.offset

    def flow(self, sigma, resistance) -> list:
        return flow_rate_power(sigma, resistance, self.power)


class ZeroFlow:
    """Purely elastic material."""

    def resistance(self, r):
        return 1.0

    def flow(self, sigma, resistance) -> list:
        return tn.zeros()
