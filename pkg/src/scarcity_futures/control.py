"""Explicit upwind finite-difference solver for the producer's HJB equation.

State ``(r, x, d)``: wealth, stock and demand.  With power utility the value
function solves

    0 = v_t + a d v_d + 1/2 sigma^2 v_dd - k(x) v_r
        + sup_{q, u, theta} { u (v_x - psi v_r) + (q psi - c(q)) v_r
                              + mu_f theta v_r + 1/2 beta^2 theta^2 v_rr }

with ``v(T, r, x, d) = r**gamma``.  Controls are chosen in closed form: ``q``
from the first-order condition, ``u`` bang-bang, ``theta`` from the quadratic
maximisation.  Advection terms are upwinded by the sign of their drift and
diffusions are central, so the scheme is monotone under the CFL bound.

Boundaries: ``r = 0`` is a reflecting wall with no trading; at ``r = r_max`` the
curvature is closed by the power-law relation ``v_rr = (gamma - 1) v_r / r``
(homothetic tail), first differences are one-sided; ``d`` boundaries use one-sided first
differences and zero curvature; ``x`` boundaries truncate the storage rate.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import pricing
from .errors import CFLError, DomainError
from .market import ProducerSpec, q_star, spot_psi

logger = logging.getLogger(__name__)

# Extra margin on the a-priori trading-volatility bound used to size nt.
_CFL_SAFETY = 1.25
_MAX_STORED_SLICES = 101


@dataclass(frozen=True)
class GridSpec:
    r_max: float
    nr: int
    nx: int
    nd: int
    d_min: float
    d_max: float
    T: float
    nt: int | None = None
    theta_cap: float = 1e3

    def __post_init__(self):
        if min(self.nr, self.nx, self.nd) < 3:
            raise DomainError("every axis needs at least 3 nodes")
        if self.nt is not None and self.nt < 1:
            raise DomainError("nt must be >= 1")
        if self.d_min >= self.d_max:
            raise DomainError("need d_min < d_max")
        if self.T <= 0 or self.r_max <= 0 or self.theta_cap <= 0:
            raise DomainError("T, r_max and theta_cap must be > 0")

    def axes(self, spec):
        return (
            np.linspace(0.0, self.r_max, self.nr),
            np.linspace(0.0, spec.x_max, self.nx),
            np.linspace(self.d_min, self.d_max, self.nd),
        )

    def validate_for(self, spec, d0):
        if self.r_max <= spec.r0:
            raise DomainError("need r_max > r0")
        if not self.d_min < d0 < self.d_max:
            raise DomainError("need d_min < d0 < d_max")
        if spec.x_max <= 0:
            raise DomainError("x-axis needs x_max > 0")


@dataclass
class ValueGrid:
    """Value function and policies on stored time slices.

    Arrays have shape ``(len(times), nr, nx, nd)``.
    """

    times: np.ndarray
    r: np.ndarray
    x: np.ndarray
    d: np.ndarray
    values: np.ndarray
    policy_u: np.ndarray
    policy_q: np.ndarray
    policy_theta: np.ndarray
    gamma: float
    nt: int
    meta: dict = field(default_factory=dict)

    def slice_index(self, t):
        """Index of the stored slice in force at time ``t`` (last one at or before t)."""
        idx = np.searchsorted(self.times, np.asarray(t) + 1e-12, side="right") - 1
        return np.clip(idx, 0, self.times.size - 1)

    def value_at(self, r, x, d, t=0.0):
        k = int(self.slice_index(t))
        return float(_interp3(self.values[k], (self.r, self.x, self.d), np.array([[r, x, d]]))[0])

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = ("values", "policy_u", "policy_q", "policy_theta")
        for name in arrays:
            np.ascontiguousarray(getattr(self, name), dtype="<f8").tofile(directory / f"{name}.bin")
        sidecar = {
            "dtype": "<f8",
            "order": "C",
            "shape": list(self.values.shape),
            "axes": ["t", "r", "x", "d"],
            "arrays": list(arrays),
            "times": self.times.tolist(),
            "r": self.r.tolist(),
            "x": self.x.tolist(),
            "d": self.d.tolist(),
            "gamma": self.gamma,
            "nt": self.nt,
            "meta": self.meta,
        }
        (directory / "value_grid.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        side = json.loads((directory / "value_grid.json").read_text())
        shape = tuple(side["shape"])
        arrs = {
            name: np.fromfile(directory / f"{name}.bin", dtype=side["dtype"]).reshape(shape)
            for name in side["arrays"]
        }
        return cls(
            times=np.array(side["times"]),
            r=np.array(side["r"]),
            x=np.array(side["x"]),
            d=np.array(side["d"]),
            gamma=side["gamma"],
            nt=side["nt"],
            meta=side["meta"],
            **arrs,
        )


def _interp3(table, axes, pts):
    """Trilinear interpolation of ``table`` at ``pts`` (shape (n, 3)), clamped to the grid."""
    idx, frac = [], []
    for k, ax in enumerate(axes):
        p = np.clip(pts[:, k], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, p, side="right") - 1, 0, ax.size - 2)
        idx.append(i)
        frac.append((p - ax[i]) / (ax[i + 1] - ax[i]))
    out = np.zeros(pts.shape[0])
    for corner in range(8):
        w = np.ones(pts.shape[0])
        ids = []
        for k in range(3):
            bit = (corner >> k) & 1
            w = w * (frac[k] if bit else 1.0 - frac[k])
            ids.append(idx[k] + bit)
        out += w * table[ids[0], ids[1], ids[2]]
    return out


def _coefficients(fm, times, d_axis):
    """lam(t_n, d_j), beta(t_n, d_j) on the solver grid (times strictly before T)."""
    lam = np.empty((times.size, d_axis.size))
    beta = np.empty_like(lam)
    for n, t in enumerate(times):
        lam[n] = fm.risk.market_price(t, d_axis)
        beta[n] = pricing.forward_vol(fm, float(t), d_axis)
    return lam, beta


def required_nt(fm, spec, grid):
    """Smallest nt satisfying the CFL bound under a-priori coefficient bounds."""
    r_ax, x_ax, d_ax = grid.axes(spec)
    dr, dx, dd = r_ax[1] - r_ax[0], x_ax[1] - x_ax[0], d_ax[1] - d_ax[0]
    lam_max = max(np.max(np.abs(fm.risk.lambda0)) + np.max(np.abs(fm.risk.lambda1)) * max(abs(grid.d_min), abs(grid.d_max)), 0.0)
    vol_r = _CFL_SAFETY * lam_max * grid.r_max / (1.0 - spec.gamma)
    psi_max = float(np.max(spot_psi(d_ax, fm.spot)))
    cost = spec.cost
    phys = (spec.q_max + max(abs(spec.u_min), spec.u_max)) * psi_max + cost.production(spec.q_max) + cost.storage(spec.x_max)
    rate = (
        abs(fm.demand.a) * max(abs(grid.d_min), abs(grid.d_max)) / dd
        + fm.demand.sigma ** 2 / dd ** 2
        + max(abs(spec.u_min), spec.u_max) / dx
        + (phys + lam_max * vol_r) / dr
        + vol_r ** 2 / dr ** 2
    )
    return max(1, math.ceil(grid.T * rate))


def _diff_ops(V, dr, dx, dd, gamma, r_max):
    """One-sided and central differences of V (shape (nr, nx, nd)) along each axis."""
    dr_fwd = np.empty_like(V)
    dr_fwd[:-1] = (V[1:] - V[:-1]) / dr
    dr_fwd[-1] = dr_fwd[-2]  # one-sided past r_max
    dr_bwd = np.empty_like(V)
    dr_bwd[1:] = dr_fwd[:-1]
    dr_bwd[0] = 0.0  # reflecting wall at r = 0
    vr = 0.5 * (dr_fwd + dr_bwd)
    vr[0] = dr_fwd[0]
    vr[-1] = dr_bwd[-1]
    vrr = np.zeros_like(V)
    vrr[1:-1] = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / dr ** 2
    vrr[-1] = (gamma - 1.0) * dr_bwd[-1] / r_max

    dx_fwd = np.zeros_like(V)
    dx_fwd[:, :-1] = (V[:, 1:] - V[:, :-1]) / dx
    dx_bwd = np.zeros_like(V)
    dx_bwd[:, 1:] = dx_fwd[:, :-1]

    dd_fwd = np.empty_like(V)
    dd_fwd[:, :, :-1] = (V[:, :, 1:] - V[:, :, :-1]) / dd
    dd_fwd[:, :, -1] = dd_fwd[:, :, -2]
    dd_bwd = np.empty_like(V)
    dd_bwd[:, :, 1:] = dd_fwd[:, :, :-1]
    dd_bwd[:, :, 0] = dd_fwd[:, :, 0]
    vdd = np.zeros_like(V)
    vdd[:, :, 1:-1] = (V[:, :, 2:] - 2.0 * V[:, :, 1:-1] + V[:, :, :-2]) / dd ** 2
    return dr_fwd, dr_bwd, vr, vrr, dx_fwd, dx_bwd, dd_fwd, dd_bwd, vdd


def _theta_rule(lam, beta, vr, vrr, theta_cap):
    """theta* = -(mu_f / beta^2) (v_r / v_rr), written as -(lam / beta) (v_r / v_rr).

    Where v_rr >= 0 the quadratic has no interior maximum and theta sits at
    ``sign(mu_f) * theta_cap``.  Returns ``(theta, n_convex)``.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = -(lam / beta) * (vr / vrr)
    concave = vrr < 0
    theta = np.where(concave, theta, np.sign(lam * beta) * theta_cap)
    theta = np.where(beta > 0, theta, 0.0)
    theta = np.where(lam == 0, 0.0, theta)
    return np.clip(theta, -theta_cap, theta_cap), int(np.count_nonzero(~concave & (lam * beta != 0)))


def solve_hjb(fm, spec, grid, store_every=None):
    """Backward explicit time stepping from ``v(T) = r**gamma``; returns a ValueGrid."""
    if not 0 < spec.gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    grid.validate_for(spec, fm.demand.d0)
    if abs(grid.T - fm.maturity) > 1e-12:
        raise DomainError("grid horizon must equal the futures maturity")
    need = required_nt(fm, spec, grid)
    nt = need if grid.nt is None else grid.nt
    if nt < need:
        raise CFLError(f"nt={nt} violates the CFL bound; need nt >= {need}", need)
    if store_every is None:
        store_every = max(1, math.ceil(nt / (_MAX_STORED_SLICES - 1)))

    r_ax, x_ax, d_ax = grid.axes(spec)
    dr, dx, dd = r_ax[1] - r_ax[0], x_ax[1] - x_ax[0], d_ax[1] - d_ax[0]
    dt = grid.T / nt
    times = dt * np.arange(nt + 1)
    lam_tab, beta_tab = _coefficients(fm, times[:-1], d_ax)

    psi = spot_psi(d_ax, fm.spot)[None, None, :]
    q = q_star(psi, spec)
    prod_profit = q * psi - spec.cost.production(q)
    storage_cost = spec.cost.storage(x_ax)[None, :, None]
    adv_d = fm.demand.a * d_ax[None, None, :]
    half_sig2 = 0.5 * fm.demand.sigma ** 2
    r_col = r_ax[:, None, None]
    at_top = np.zeros((grid.nr, 1, 1), dtype=bool)
    at_top[-1] = True
    can_inject = (np.arange(grid.nx) < grid.nx - 1)[None, :, None]
    can_withdraw = (np.arange(grid.nx) > 0)[None, :, None]

    V = np.broadcast_to(r_col ** spec.gamma, (grid.nr, grid.nx, grid.nd)).copy()
    shape = (grid.nr, grid.nx, grid.nd)
    stored = list(range(nt, -1, -store_every))
    if stored[-1] != 0:
        stored.append(0)
    stored = stored[::-1]
    slot = {n: i for i, n in enumerate(stored)}
    values = np.empty((len(stored),) + shape)
    pol_u = np.zeros_like(values)
    pol_q = np.zeros_like(values)
    pol_theta = np.zeros_like(values)
    values[slot[nt]] = V
    pol_q[slot[nt]] = np.broadcast_to(q, shape)

    n_convex = 0
    max_cfl = 0.0
    for n in range(nt - 1, -1, -1):
        lam = lam_tab[n][None, None, :]
        beta = beta_tab[n][None, None, :]
        dr_f, dr_b, vr, vrr, dx_f, dx_b, dd_f, dd_b, vdd = _diff_ops(V, dr, dx, dd, spec.gamma, r_ax[-1])

        # storage: compare u_max, u_min and 0 with upwinded v_x; ties favour u_max
        gain_up = np.where(can_inject, spec.u_max * (dx_f - psi * vr), -np.inf)
        gain_dn = np.where(can_withdraw, spec.u_min * (dx_b - psi * vr), -np.inf)
        choice = np.argmax(np.stack([gain_up, gain_dn, np.zeros(shape)]), axis=0)
        u = np.choose(choice, [spec.u_max, spec.u_min, 0.0])
        x_term = np.where(u > 0, u * dx_f, u * dx_b)

        theta, nc = _theta_rule(lam, beta, vr[1:], vrr[1:], grid.theta_cap)
        n_convex += nc
        theta = np.concatenate([np.zeros((1,) + shape[1:]), theta])
        vol_r = beta * theta
        diff_r = 0.5 * vol_r ** 2

        mu_r = prod_profit - u * psi - storage_cost + lam * vol_r
        r_term = np.where(mu_r > 0, mu_r * dr_f, mu_r * dr_b)
        d_term = np.where(adv_d > 0, adv_d * dd_f, adv_d * dd_b)

        rate = (
            np.abs(adv_d) / dd + 2.0 * half_sig2 / dd ** 2 + np.abs(u) / dx
            + np.abs(mu_r) / dr + np.where(at_top, diff_r * (1.0 - spec.gamma) / (r_ax[-1] * dr), 2.0 * diff_r / dr ** 2)
        )
        cfl = dt * float(np.max(rate))
        max_cfl = max(max_cfl, cfl)
        if cfl > 1.0:
            need = math.ceil(grid.T * float(np.max(rate)))
            raise CFLError(f"CFL number {cfl:.3f} > 1 at t={times[n]:.4f}; need nt >= {need}", need)

        V = V + dt * (d_term + half_sig2 * vdd + x_term + r_term + diff_r * vrr)
        if n in slot:
            k = slot[n]
            values[k] = V
            pol_u[k] = u
            pol_q[k] = np.broadcast_to(q, shape)
            pol_theta[k] = theta

    if n_convex:
        logger.warning("v_rr >= 0 at %d node-steps: theta clamped to +-%g", n_convex, grid.theta_cap)
    meta = {
        "scheme": "explicit upwind, central diffusion",
        "dt": dt,
        "store_every": store_every,
        "max_cfl": max_cfl,
        "convex_node_steps": n_convex,
        "theta_cap": grid.theta_cap,
        "grid": asdict(grid) | {"nt": nt},
    }
    return ValueGrid(
        times=times[stored], r=r_ax, x=x_ax, d=d_ax, values=values, policy_u=pol_u,
        policy_q=pol_q, policy_theta=pol_theta, gamma=spec.gamma, nt=nt, meta=meta,
    )


class PolicyRule:
    """Feedback controls ``(q, u, theta)`` read off a ValueGrid.

    Derivatives of the stored value slices are taken by central differences
    and interpolated trilinearly to the query states.
    """

    def __init__(self, vgrid, fm, spec):
        self.vgrid = vgrid
        self.fm = fm
        self.spec = spec
        self._derivs = {}

    def _slice_derivs(self, k):
        if k not in self._derivs:
            vg = self.vgrid
            V = vg.values[k]
            vr = np.gradient(V, vg.r, axis=0)
            vx = np.gradient(V, vg.x, axis=1)
            vrr = np.zeros_like(V)
            vrr[1:-1] = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / (vg.r[1] - vg.r[0]) ** 2
            vrr[-1] = (vg.gamma - 1.0) * vr[-1] / vg.r[-1]
            self._derivs[k] = (vr, vx, vrr)
        return self._derivs[k]

    def derivatives(self, t, r, x, d):
        vg = self.vgrid
        pts = np.column_stack(np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (r, x, d))))
        k = int(vg.slice_index(t))
        return tuple(_interp3(arr, (vg.r, vg.x, vg.d), pts) for arr in self._slice_derivs(k))

    def __call__(self, t, r, x, d):
        spec = self.spec
        r, x, d = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (r, x, d)))
        psi = spot_psi(d, self.fm.spot)
        q = q_star(psi, spec)
        vr, vx, vrr = self.derivatives(t, r, x, d)
        u = np.where(psi * vr > vx, spec.u_min, spec.u_max)
        u = np.where((x <= 0) & (u < 0), 0.0, u)
        u = np.where((x >= spec.x_max) & (u > 0), 0.0, u)
        if t >= self.fm.maturity:
            return q, u, np.zeros_like(r)
        lam = self.fm.risk.market_price(t, d)
        beta = pricing.forward_vol(self.fm, float(t), d)
        theta, _ = _theta_rule(lam, beta, vr, vrr, self.vgrid.meta.get("theta_cap", 1e3))
        theta = np.where(r <= 0, 0.0, theta)
        return q, u, theta


def extract_policy(vgrid, fm, spec, state):
    """Controls ``(q, u, theta)`` at a single state ``(t, r, x, d)``."""
    t, r, x, d = state
    vg = vgrid
    if not (vg.r[0] <= r <= vg.r[-1] and vg.x[0] <= x <= vg.x[-1] and vg.d[0] <= d <= vg.d[-1]):
        raise DomainError("state outside the grid")
    q, u, theta = PolicyRule(vgrid, fm, spec)(t, r, x, d)
    return float(q[0]), float(u[0]), float(theta[0])


def myopic_policy(fm, spec):
    """Baseline: q*, cash-and-carry storage (sell when spot > futures, else store), no trading.

    This is the storage rule with the value function replaced by the
    mark-to-market proxy ``U(r + x F_t)``, for which ``v_x / v_r = F_t``.
    """

    def policy(t, r, x, d):
        r, x, d = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (r, x, d)))
        psi = spot_psi(d, fm.spot)
        fut = np.atleast_1d(pricing.futures_price(fm, min(float(t), fm.maturity), d))
        u = np.where(psi > fut, spec.u_min, spec.u_max)
        return q_star(psi, spec), u, np.zeros_like(r)

    return policy


@dataclass(frozen=True)
class PolicyValue:
    mean: float
    std_err: float
    n_inadmissible: int


def evaluate_policy(fm, spec, policy, n_paths, nt, rng_state):
    """Monte-Carlo estimate of E[R_T**gamma] under P with Ito futures increments."""
    from .sim import simulate_bundle

    bundle = simulate_bundle(fm, spec, policy, n_paths, nt, rng_state, futures_mode="ito")
    util = np.maximum(bundle.wealth[:, -1], 0.0) ** spec.gamma
    return PolicyValue(float(util.mean()), float(util.std(ddof=1) / math.sqrt(n_paths)), int(bundle.inadmissible.sum()))
