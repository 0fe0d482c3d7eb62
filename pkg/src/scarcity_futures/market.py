"""Static maps of the physical market.

The spot price is a scarcity-amplified marginal cost,

    psi(d) = b * f(d) * g(cbar - d),

with ``f(d) = clip(d, 0, M)**alpha`` and ``g(x) = 1 / max(x, eps)``.  The producer
runs quadratic production and storage costs and sells at the spot price.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_BOX_TOL = 1e-9


def _scalar_or_array(x):
    return x if np.ndim(x) else float(x)


@dataclass(frozen=True)
class SpotMap:
    b: float
    cbar: float
    eps: float
    alpha_exp: float
    cap_m: float

    def __post_init__(self):
        if self.b <= 0:
            raise DomainError("b must be > 0")
        if self.cbar <= 0:
            raise DomainError("cbar must be > 0")
        if not 0 < self.eps < self.cbar:
            raise DomainError("need 0 < eps < cbar")
        if not 0 < self.alpha_exp < 1:
            raise DomainError("need 0 < alpha_exp < 1")
        if self.cap_m < self.cbar - self.eps:
            raise DomainError("need cap_m >= cbar - eps")

    @property
    def bound(self):
        """Supremum of psi: b * M**alpha / eps."""
        return self.b * self.cap_m ** self.alpha_exp / self.eps

    @property
    def kinks(self):
        """Points where psi or one of its derivatives is discontinuous."""
        return tuple(sorted({0.0, self.cbar - self.eps, self.cap_m}))

    @property
    def root_singularity(self):
        """(location, exponent): psi behaves like (y - location)**exponent just above location."""
        return 0.0, self.alpha_exp

    def psi(self, d):
        return spot_psi(d, self)


def scarcity_g(x, eps):
    """1 / max(x, eps): reciprocal capacity margin, floored at 1/eps."""
    if eps <= 0:
        raise DomainError("eps must be > 0")
    return _scalar_or_array(1.0 / np.maximum(np.asarray(x, dtype=float), eps))


def marginal_cost_f(d, spot):
    d = np.asarray(d, dtype=float)
    return _scalar_or_array(np.clip(d, 0.0, spot.cap_m) ** spot.alpha_exp)


def spot_psi(d, spot):
    """Spot price as a function of demand."""
    d = np.asarray(d, dtype=float)
    f = np.clip(d, 0.0, spot.cap_m) ** spot.alpha_exp
    return _scalar_or_array(spot.b * f / np.maximum(spot.cbar - d, spot.eps))


@dataclass(frozen=True)
class CostSpec:
    """c(q) = c_lin q + c_quad q^2 and k(x) = k_lin x + k_quad x^2."""

    c_lin: float
    c_quad: float
    k_lin: float
    k_quad: float

    def __post_init__(self):
        if self.c_quad <= 0:
            raise DomainError("c_quad must be > 0 (strict convexity)")
        if self.c_lin < 0 or self.k_lin < 0 or self.k_quad < 0:
            raise DomainError("cost coefficients must be >= 0")
        if self.k_lin + self.k_quad <= 0:
            raise DomainError("storage cost must be strictly increasing")

    def production(self, q):
        return self.c_lin * q + self.c_quad * q * q

    def production_marginal(self, q):
        return self.c_lin + 2.0 * self.c_quad * q

    def storage(self, x):
        return self.k_lin * x + self.k_quad * x * x


@dataclass(frozen=True)
class ProducerSpec:
    cost: CostSpec
    q_max: float
    u_min: float
    u_max: float
    x_max: float
    x0: float
    r0: float
    gamma: float

    def __post_init__(self):
        if self.q_max < 0:
            raise DomainError("q_max must be >= 0")
        if not self.u_min <= 0 <= self.u_max:
            raise DomainError("need u_min <= 0 <= u_max")
        if self.x_max < 0 or not 0 <= self.x0 <= self.x_max:
            raise DomainError("need 0 <= x0 <= x_max")
        if self.r0 <= 0:
            raise DomainError("r0 must be > 0")
        if not 0 < self.gamma < 1:
            raise DomainError("gamma must lie in (0, 1)")


def q_star(s, spec):
    """Profit-maximizing production rate at spot price ``s``: clip((c')^-1(s), 0, q_max)."""
    s = np.asarray(s, dtype=float)
    cost = spec.cost
    q = (s - cost.c_lin) / (2.0 * cost.c_quad)
    return _scalar_or_array(np.clip(q, 0.0, spec.q_max))


def profit_rate(q, u, s, x, spec):
    """Instantaneous physical profit (q - u) s - c(q) - k(x)."""
    q, u, x = (np.asarray(v, dtype=float) for v in (q, u, x))
    if np.any(q < -_BOX_TOL) or np.any(q > spec.q_max + _BOX_TOL):
        raise DomainError("production outside [0, q_max]")
    if np.any(u < spec.u_min - _BOX_TOL) or np.any(u > spec.u_max + _BOX_TOL):
        raise DomainError("storage rate outside [u_min, u_max]")
    if np.any(x < -_BOX_TOL) or np.any(x > spec.x_max + _BOX_TOL):
        raise DomainError("stock outside [0, x_max]")
    out = (q - u) * np.asarray(s, dtype=float) - spec.cost.production(q) - spec.cost.storage(x)
    return _scalar_or_array(out)
