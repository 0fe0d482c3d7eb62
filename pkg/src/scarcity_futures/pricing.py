"""Futures curve as the Q-expectation of the spot price at maturity.

``phi(t, d) = E^Q[psi(D_T) | D_t = d]`` with ``D_T | D_t`` Gaussian.  The forward
volatility is ``beta = sigma * dphi/dd`` and the physical drift of the futures
price is ``mu_f = lam(t, d) * beta``.

The spot map has kinks (at 0, cbar - eps and M) and a root singularity
``d**alpha`` at 0, which wreck the spectral convergence of plain Gauss-Hermite.
The default quadrature therefore splits the truncated Gaussian support at the
kinks and integrates each piece with Gauss-Legendre, switching to Gauss-Jacobi
(weight ``(y - 0)**alpha``) on the piece that starts at the root.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre
from numpy.polynomial.hermite import hermgauss

from . import demand
from .demand import DemandModel, RiskPrice, as_generator, conditional_law, transition_factor
from .errors import DomainError
from .market import SpotMap, spot_psi

# Half-width of the integration window in standard deviations; Gaussian mass
# beyond 12 sd is below 1e-32.
_WINDOW_SD = 12.0
_CHUNK = 4096


@dataclass(frozen=True)
class FuturesModel:
    demand: DemandModel
    risk: RiskPrice
    spot: SpotMap
    maturity: float
    quad_order: int = 128
    mc_paths: int = 100_000

    def __post_init__(self):
        if self.maturity <= 0:
            raise DomainError("maturity must be > 0")
        if self.quad_order < 16:
            raise DomainError("quad_order must be >= 16")
        if self.risk.horizon < self.maturity - 1e-12:
            raise DomainError("risk price must cover [0, maturity]")

    def psi(self, d):
        return self.spot.psi(d)

    def q_law(self, t, d, horizon=None):
        return conditional_law(self.demand, self.risk, t, self.maturity if horizon is None else horizon, d)


@dataclass(frozen=True)
class CurvePoint:
    t: float
    d: float
    price: float
    vol: float
    drift: float


@dataclass(frozen=True)
class MCComparison:
    """A deterministic reference value against a Monte-Carlo estimate."""

    reference: float
    estimate: float
    std_err: float

    @property
    def z(self):
        diff = abs(self.estimate - self.reference)
        if self.std_err == 0:
            return 0.0 if diff == 0 else math.inf
        return diff / self.std_err

    def within(self, n_se, atol=0.0):
        return abs(self.estimate - self.reference) <= n_se * self.std_err + atol


@lru_cache(maxsize=None)
def _legendre(n):
    x, w = roots_legendre(n)
    return x, w


@lru_cache(maxsize=None)
def _jacobi(n, beta):
    # weight (1 + x)**beta on [-1, 1]
    x, w = roots_jacobi(n, 0.0, beta)
    return x, w


def _check_t(fm, t):
    if t < -1e-12 or t > fm.maturity + 1e-12:
        raise DomainError(f"need 0 <= t <= T, got t={t}")


def _piecewise_expectation(spot, mean, std, order, score):
    """E[psi(Y) w(Y)] for Y ~ N(mean, std^2), w = 1 or (Y - mean)/std^2."""
    kinks = np.asarray(getattr(spot, "kinks", ()), dtype=float)
    sing = getattr(spot, "root_singularity", None)
    lx, lw = _legendre(order)
    if sing is not None:
        jx, jw = _jacobi(order, float(sing[1]))
    norm = 1.0 / (std * math.sqrt(2.0 * math.pi))

    def integrand(y, m):
        z = (y - m) / std
        val = spot.psi(y) * norm * np.exp(-0.5 * z * z)
        if score:
            val = val * z / std
        return val

    out = np.empty_like(mean)
    for start in range(0, mean.size, _CHUNK):
        m = mean[start:start + _CHUNK, None]
        lo = m - _WINDOW_SD * std
        hi = m + _WINDOW_SD * std
        edges = [lo] + [np.clip(k, lo, hi) for k in kinks] + [hi]
        total = np.zeros(m.shape[0])
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            if not np.any(half > 0):
                continue
            y = a + half * (lx + 1.0)
            piece = np.sum(lw * integrand(y, m), axis=1) * half[:, 0]
            if sing is not None:
                loc, expo = sing
                # piece starts exactly at the root: integrate (y - loc)^expo exactly
                at_root = (a[:, 0] == loc) & (half[:, 0] > 0)
                if np.any(at_root):
                    ar, hr, mr = a[at_root], half[at_root], m[at_root]
                    yj = ar + hr * (jx + 1.0)
                    g = integrand(yj, mr) / (yj - loc) ** expo
                    piece[at_root] = np.sum(jw * g, axis=1) * hr[:, 0] ** (expo + 1.0)
            total += piece
        out[start:start + _CHUNK] = total
    return out


def _hermite_expectation(spot, mean, std, order, score):
    z, w = hermgauss(order)
    z = z * math.sqrt(2.0)
    w = w / math.sqrt(math.pi)
    out = np.empty_like(mean)
    for start in range(0, mean.size, _CHUNK):
        m = mean[start:start + _CHUNK, None]
        vals = spot.psi(m + std * z)
        if score:
            vals = vals * z / std
        out[start:start + _CHUNK] = vals @ w
    return out


def gaussian_expectation(spot, mean, std, order=128, score=False, method="piecewise"):
    """Expectation of ``psi(Y)`` (or ``psi(Y) (Y - mean)/std^2`` if ``score``) for Y ~ N(mean, std^2)."""
    mean_arr = np.atleast_1d(np.asarray(mean, dtype=float)).ravel()
    if std <= 0:
        raise DomainError("gaussian_expectation needs std > 0")
    if method == "piecewise":
        res = _piecewise_expectation(spot, mean_arr, float(std), order, score)
    elif method == "hermite":
        res = _hermite_expectation(spot, mean_arr, float(std), order, score)
    else:
        raise ValueError(f"unknown quadrature method {method!r}")
    res = res.reshape(np.shape(mean))
    return res if res.ndim else float(res)


def futures_price(fm, t, d, method="piecewise"):
    """phi(t, d) = E^Q[psi(D_T) | D_t = d]."""
    _check_t(fm, t)
    law = fm.q_law(t, d)
    if law.variance == 0.0:
        return fm.psi(law.mean)
    price = gaussian_expectation(fm.spot, law.mean, law.std, fm.quad_order, method=method)
    # expectation of a variable in [0, bound]; keep roundoff on the plateau inside
    price = np.clip(price, 0.0, fm.spot.bound)
    return price if np.ndim(price) else float(price)


def forward_vol(fm, t, d, method="piecewise"):
    """beta(t, d) = sigma * Phi(t, T) * E^Q[psi(D_T) (D_T - m) / Sigma^2]."""
    _check_t(fm, t)
    if t >= fm.maturity:
        raise DomainError("forward volatility is undefined at maturity")
    law = fm.q_law(t, d)
    if fm.demand.sigma == 0.0 or law.variance == 0.0:
        zero = np.zeros(np.shape(d))
        return zero if zero.ndim else 0.0
    flow = transition_factor(fm.demand, fm.risk, t, fm.maturity)
    score = gaussian_expectation(fm.spot, law.mean, law.std, fm.quad_order, score=True, method=method)
    # score = Cov(psi(Y), Y) / Sigma^2 >= 0 for nondecreasing psi; drop roundoff on flat stretches
    score = np.maximum(score, 0.0)
    out = fm.demand.sigma * flow * score
    return out if np.ndim(out) else float(out)


def forward_drift(fm, t, d, method="piecewise"):
    """mu_f(t, d) = (lambda0(t) + lambda1(t) d) * beta(t, d): P-drift of the futures price."""
    beta = forward_vol(fm, t, d, method=method)
    out = fm.risk.market_price(t, d) * beta
    return out if np.ndim(out) else float(out)


def curve(fm, times, demands):
    """CurvePoints on a t-major (t, d) grid; vol and drift are NaN at maturity."""
    demands = np.asarray(demands, dtype=float)
    points = []
    for t in times:
        t = float(t)
        price = np.atleast_1d(futures_price(fm, t, demands))
        if t < fm.maturity:
            vol = np.atleast_1d(forward_vol(fm, t, demands))
            drift = np.atleast_1d(fm.risk.market_price(t, demands)) * vol
        else:
            vol = drift = np.full(demands.shape, np.nan)
        points.extend(
            CurvePoint(t, float(dv), float(p), float(v), float(m))
            for dv, p, v, m in zip(demands, price, vol, drift)
        )
    return points


def write_curve_csv(points, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "d", "price", "vol", "drift"])
        for p in points:
            writer.writerow([repr(p.t), repr(p.d), repr(p.price), repr(p.vol), repr(p.drift)])


def mc_futures_price(fm, t, d, n_paths, rng_state):
    """Monte-Carlo oracle: exact Q-sampling of D_T, then the sample mean of psi."""
    draws = demand.sample_transition(fm.demand, fm.risk, t, fm.maturity, np.full(n_paths, float(d)), rng_state)
    vals = fm.psi(np.asarray(draws))
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_paths))


def quadrature_vs_mc(fm, t, d, n_paths, rng_state):
    est, se = mc_futures_price(fm, t, d, n_paths, rng_state)
    if se == 0.0:
        # every draw landed on a flat stretch of psi: fall back to one-draw resolution
        se = fm.spot.bound / n_paths
    return MCComparison(float(futures_price(fm, t, d)), est, se)


def rn_density(fm, path, dt):
    """Discretized dQ/dP along P-sampled demand paths on a uniform grid from t = 0.

    The Brownian increments are rebuilt from the exact OU innovations,
    ``dW_k = (D_{k+1} - e^{a dt} D_k) * sqrt(dt / v)/sigma`` with ``v`` the
    innovation variance per unit sigma^2, which makes them exact N(0, dt)
    draws.  Returns ``L`` with shape ``(n_paths,)``.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    n_steps = path.shape[1] - 1
    times = dt * np.arange(n_steps)
    a, sigma = fm.demand.a, fm.demand.sigma
    lam = fm.risk.market_price(times[None, :], path[:, :-1])
    if not np.any(lam):
        return np.ones(path.shape[0])
    if sigma == 0.0:
        dw = np.zeros_like(lam)
    else:
        var_unit = dt * demand._expm1_over(2.0 * a * dt)
        innov = path[:, 1:] - math.exp(a * dt) * path[:, :-1]
        dw = innov * math.sqrt(dt / var_unit) / sigma
    return np.exp(-np.sum(lam * dw, axis=1) - 0.5 * dt * np.sum(lam * lam, axis=1))


@dataclass(frozen=True)
class GirsanovReport:
    unit_mass: MCComparison
    reweighted_price: MCComparison


def girsanov_check(fm, n_paths, n_steps, rng_state):
    """E^P[L_T] vs 1 and E^P[L_T psi(D_T)] vs phi(0, D_0)."""
    dt = fm.maturity / n_steps
    times = dt * np.arange(n_steps + 1)
    paths, _ = demand.sample_paths(fm.demand, None, times, n_paths, rng_state)
    dens = rn_density(fm, paths, dt)
    weighted = dens * fm.psi(paths[:, -1])
    root_n = math.sqrt(n_paths)
    unit = MCComparison(1.0, float(dens.mean()), float(dens.std(ddof=1) / root_n))
    price = MCComparison(
        float(futures_price(fm, 0.0, fm.demand.d0)), float(weighted.mean()), float(weighted.std(ddof=1) / root_n)
    )
    return GirsanovReport(unit, price)


def martingale_check(fm, t, s, d, n_paths, rng_state):
    """Tower property: phi(t, d) against the Q-average of phi(s, D_s) with D_t = d."""
    if not t <= s < fm.maturity:
        raise DomainError("need t <= s < T")
    lhs = float(futures_price(fm, t, d))
    if s == t:
        return MCComparison(lhs, lhs, 0.0)
    rng = as_generator(rng_state)
    law = fm.q_law(t, d, horizon=s)
    if law.variance == 0.0:
        return MCComparison(lhs, float(futures_price(fm, s, law.mean)), 0.0)
    draws = law.mean + law.std * rng.standard_normal(n_paths)
    vals = futures_price(fm, s, draws)
    return MCComparison(lhs, float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_paths)))


def terminal_gap(fm, demands, lag=1e-4):
    """max |phi(T - lag, d) - psi(d)| over ``demands``."""
    demands = np.asarray(demands, dtype=float)
    return float(np.max(np.abs(futures_price(fm, fm.maturity - lag, demands) - spot_psi(demands, fm.spot))))
