"""Demand process: an Ornstein-Uhlenbeck process with zero long-run mean.

Under the physical measure P

    dD = a D dt + sigma dW.

The pricing measure Q is generated by the market price of demand risk
``lam(t, D) = lambda0(t) + lambda1(t) D`` through the density
``dQ/dP = exp(-int lam dW - 1/2 int lam^2 dt)``.  By Girsanov,
``W^Q = W + int lam dt`` is a Q-Brownian motion, so under Q

    dD = ((a - lambda1 sigma) D - lambda0 sigma) dt + sigma dW^Q.

Both laws are linear SDEs with Gaussian transitions.  ``lambda0`` and
``lambda1`` are piecewise constant, so every integral below is evaluated
exactly, segment by segment.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLawError, DomainError

_TIME_TOL = 1e-12


@dataclass(frozen=True)
class DemandModel:
    """OU parameters under P: mean-reversion ``a``, volatility ``sigma``, initial demand ``d0``."""

    a: float
    sigma: float
    d0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.sigma) and math.isfinite(self.d0)):
            raise DomainError("demand parameters must be finite")
        if self.sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {self.sigma}")
        if self.a >= 0:
            warnings.warn(
                f"a = {self.a} >= 0: demand is not mean reverting", RuntimeWarning, stacklevel=3
            )


@dataclass(frozen=True)
class RiskPrice:
    """Piecewise-constant market price of demand risk ``lambda0(t) + lambda1(t) d``.

    ``breakpoints`` holds the n+1 knots ``0 = t_0 < ... < t_n = T``; segment i is
    ``[t_i, t_{i+1})`` and carries ``lambda0[i]``, ``lambda1[i]``.
    """

    breakpoints: tuple
    lambda0: tuple
    lambda1: tuple

    def __post_init__(self):
        knots = np.asarray(self.breakpoints, dtype=float)
        l0 = np.asarray(self.lambda0, dtype=float)
        l1 = np.asarray(self.lambda1, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise DomainError("breakpoints need at least two knots")
        if abs(knots[0]) > _TIME_TOL:
            raise DomainError("breakpoints must start at 0")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        if l0.shape != (knots.size - 1,) or l1.shape != (knots.size - 1,):
            raise DomainError("lambda0/lambda1 need one value per segment")
        if not (np.all(np.isfinite(l0)) and np.all(np.isfinite(l1))):
            raise DomainError("lambda0/lambda1 must be finite")
        object.__setattr__(self, "breakpoints", tuple(knots.tolist()))
        object.__setattr__(self, "lambda0", tuple(l0.tolist()))
        object.__setattr__(self, "lambda1", tuple(l1.tolist()))

    @classmethod
    def constant(cls, lambda0, lambda1, horizon):
        return cls((0.0, float(horizon)), (float(lambda0),), (float(lambda1),))

    @classmethod
    def zero(cls, horizon):
        return cls.constant(0.0, 0.0, horizon)

    @property
    def horizon(self):
        return self.breakpoints[-1]

    def _segment(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, len(self.lambda0) - 1)

    def lambda0_at(self, t):
        return np.asarray(self.lambda0)[self._segment(t)]

    def lambda1_at(self, t):
        return np.asarray(self.lambda1)[self._segment(t)]

    def market_price(self, t, d):
        """lambda(t, d) = lambda0(t) + lambda1(t) d."""
        return self.lambda0_at(t) + self.lambda1_at(t) * np.asarray(d, dtype=float)

    def segments(self, s, T):
        """Yield ``(lo, hi, lambda0, lambda1)`` pieces covering ``[s, T]``."""
        if T > self.horizon + _TIME_TOL:
            raise DomainError(f"risk price defined up to {self.horizon}, asked for {T}")
        knots = self.breakpoints
        for i in range(len(self.lambda0)):
            lo, hi = max(s, knots[i]), min(T, knots[i + 1])
            if hi > lo:
                yield lo, hi, self.lambda0[i], self.lambda1[i]


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray | float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError("variance must be >= 0")

    @property
    def std(self):
        return math.sqrt(self.variance)


def _expm1_over(x):
    """(e^x - 1) / x with the removable singularity at 0 filled in."""
    x = float(x)
    if abs(x) < 1e-8:
        return 1.0 + x / 2.0 + x * x / 6.0
    return math.expm1(x) / x


def _pieces(model, risk, s, T):
    """Constant-coefficient pieces of the linear drift ``kappa D + c`` on ``[s, T]``."""
    if risk is None:
        if T > s:
            yield s, T, model.a, 0.0
        return
    for lo, hi, l0, l1 in risk.segments(s, T):
        yield lo, hi, model.a - l1 * model.sigma, -l0 * model.sigma


def _check_times(s, T):
    if s > T + _TIME_TOL:
        raise DomainError(f"need s <= T, got s={s}, T={T}")
    if s < -_TIME_TOL:
        raise DomainError(f"time must be >= 0, got {s}")


def transition_factor(model, risk, s, T):
    """Flow factor ``exp(int_s^T kappa(u) du)`` of the linear demand SDE.

    ``kappa = a`` under P (``risk=None``) and ``a - lambda1 sigma`` under Q.
    """
    _check_times(s, T)
    log_phi = sum((hi - lo) * kappa for lo, hi, kappa, _ in _pieces(model, risk, s, T))
    return math.exp(log_phi)


def _moments(model, risk, t, T):
    """Return (flow factor, additive mean shift, variance) of D_T given D_t."""
    flow = 1.0  # Phi(hi, T) while sweeping backward from T
    shift = 0.0
    var_int = 0.0
    for lo, hi, kappa, c in reversed(list(_pieces(model, risk, t, T))):
        length = hi - lo
        shift += c * flow * length * _expm1_over(kappa * length)
        var_int += flow * flow * length * _expm1_over(2.0 * kappa * length)
        flow *= math.exp(kappa * length)
    return flow, shift, model.sigma ** 2 * var_int


def conditional_law(model, risk, t, T, d):
    """Gaussian law of ``D_T`` given ``D_t = d`` (P if ``risk`` is None, else Q).

    ``d`` may be an array; the variance does not depend on it.
    """
    _check_times(t, T)
    flow, shift, var = _moments(model, risk, t, T)
    d = np.asarray(d, dtype=float)
    mean = flow * d + shift
    if mean.ndim == 0:
        mean = float(mean)
    return GaussianLaw(mean, var)


def as_generator(rng_state):
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def sample_transition(model, risk, t, t_next, d, rng_state):
    """Exact draw(s) of ``D_{t_next}`` given ``D_t = d``."""
    rng = as_generator(rng_state)
    law = conditional_law(model, risk, t, t_next, d)
    mean = np.asarray(law.mean, dtype=float)
    if law.variance == 0.0:
        return mean if mean.ndim else float(mean)
    draw = mean + law.std * rng.standard_normal(mean.shape)
    return draw if draw.ndim else float(draw)


def sample_paths(model, risk, times, n_paths, rng_state, d_start=None):
    """Exact paths on ``times``; returns ``(paths, normals)``.

    ``paths`` has shape ``(n_paths, len(times))``.  ``normals`` holds the standard
    normal innovations used for each step, shape ``(n_paths, len(times) - 1)``.
    """
    rng = as_generator(rng_state)
    times = np.asarray(times, dtype=float)
    paths = np.empty((n_paths, times.size))
    paths[:, 0] = model.d0 if d_start is None else d_start
    normals = rng.standard_normal((n_paths, times.size - 1))
    for k in range(times.size - 1):
        flow, shift, var = _moments(model, risk, times[k], times[k + 1])
        paths[:, k + 1] = flow * paths[:, k] + shift + math.sqrt(var) * normals[:, k]
    return paths, normals


def transition_density(law, y):
    """Gaussian pdf of ``law`` at ``y``."""
    if law.variance <= 0.0:
        raise DegenerateLawError("density of a degenerate (zero-variance) law")
    z = (np.asarray(y, dtype=float) - law.mean) / law.std
    out = np.exp(-0.5 * z * z) / (law.std * math.sqrt(2.0 * math.pi))
    return out if out.ndim else float(out)
