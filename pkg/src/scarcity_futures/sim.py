"""Joint simulation of demand, spot, futures, stock and wealth under P."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import demand, pricing
from .market import q_star, spot_psi

_BOX_TOL = 1e-9


@dataclass
class PathBundle:
    """Per-path arrays; state arrays have ``nt + 1`` columns, controls ``nt``."""

    times: np.ndarray
    demand: np.ndarray
    spot: np.ndarray
    futures: np.ndarray
    stock: np.ndarray
    wealth: np.ndarray
    q: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    profit: np.ndarray
    inadmissible: np.ndarray
    rejected: np.ndarray
    r0: float

    @property
    def n_paths(self):
        return self.demand.shape[0]

    def to_csv(self, path):
        """Long format, one row per (path, time); controls are blank at the last time."""
        nt = self.times.size - 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "d", "s", "f", "x", "r", "q", "u", "theta"])
            for p in range(self.n_paths):
                for k in range(nt + 1):
                    ctrl = ("", "", "") if k == nt else (repr(self.q[p, k]), repr(self.u[p, k]), repr(self.theta[p, k]))
                    w.writerow([
                        p, repr(self.times[k]), repr(self.demand[p, k]), repr(self.spot[p, k]),
                        repr(self.futures[p, k]), repr(self.stock[p, k]), repr(self.wealth[p, k]), *ctrl,
                    ])

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = ["demand", "spot", "futures", "stock", "wealth", "q", "u", "theta"]
        for name in names:
            np.ascontiguousarray(getattr(self, name), dtype="<f8").tofile(directory / f"{name}.bin")
        side = {
            "dtype": "<f8",
            "arrays": {n: list(getattr(self, n).shape) for n in names},
            "times": self.times.tolist(),
            "r0": self.r0,
            "inadmissible": np.flatnonzero(self.inadmissible).tolist(),
            "rejected": np.flatnonzero(self.rejected).tolist(),
        }
        (directory / "bundle.json").write_text(json.dumps(side, indent=2))


def zero_policy(spec):
    def policy(t, r, x, d):
        z = np.zeros(np.broadcast(np.atleast_1d(r), np.atleast_1d(x), np.atleast_1d(d)).shape)
        return z, z, z

    return policy


def constant_policy(q=0.0, u=0.0, theta=0.0):
    def policy(t, r, x, d):
        shape = np.broadcast(np.atleast_1d(r), np.atleast_1d(x), np.atleast_1d(d)).shape
        return np.full(shape, q), np.full(shape, u), np.full(shape, theta)

    return policy


def optimal_production_policy(fm, spec):
    """q = q*(psi(d)), no storage, no trading."""

    def policy(t, r, x, d):
        shape = np.broadcast(np.atleast_1d(r), np.atleast_1d(x), np.atleast_1d(d)).shape
        q = np.broadcast_to(q_star(spot_psi(np.atleast_1d(d), fm.spot), spec), shape)
        z = np.zeros(shape)
        return q, z, z

    return policy


def simulate_bundle(fm, spec, policy, n_paths, nt, rng_state, futures_mode="exact"):
    """Simulate ``n_paths`` paths on ``nt`` uniform steps over ``[0, T]``.

    ``futures_mode="exact"`` reads the futures price off the pricing function,
    ``F_k = phi(t_k, D_k)``; ``"ito"`` integrates ``dF = mu_f dt + beta dW``
    with Euler steps driven by the demand noise.
    Wealth: ``R_{k+1} = R_k + pi_k dt + theta_k (F_{k+1} - F_k)``.  A path whose
    wealth turns negative is flagged inadmissible and stops trading; a path whose
    policy leaves the control box is flagged rejected and its controls clipped.
    """
    if nt < 2:
        raise ValueError("nt must be >= 2")
    if futures_mode not in ("exact", "ito"):
        raise ValueError(f"unknown futures_mode {futures_mode!r}")
    dt = fm.maturity / nt
    times = dt * np.arange(nt + 1)
    D, normals = demand.sample_paths(fm.demand, None, times, n_paths, rng_state)
    S = spot_psi(D, fm.spot)
    F = np.empty_like(D)
    F[:, 0] = pricing.futures_price(fm, 0.0, D[:, 0])
    if futures_mode == "exact":
        for k in range(1, nt + 1):
            F[:, k] = pricing.futures_price(fm, float(times[k]), D[:, k])
    dw = math.sqrt(dt) * normals

    X = np.empty_like(D)
    R = np.empty_like(D)
    X[:, 0] = spec.x0
    R[:, 0] = spec.r0
    Q = np.empty((n_paths, nt))
    U = np.empty_like(Q)
    TH = np.empty_like(Q)
    PI = np.empty_like(Q)
    bad = np.zeros(n_paths, dtype=bool)
    rejected = np.zeros(n_paths, dtype=bool)
    cost = spec.cost

    for k in range(nt):
        q, u, th = (np.broadcast_to(np.asarray(v, dtype=float), (n_paths,)) for v in policy(times[k], R[:, k], X[:, k], D[:, k]))
        out_of_box = (
            (q < -_BOX_TOL) | (q > spec.q_max + _BOX_TOL)
            | (u < spec.u_min - _BOX_TOL) | (u > spec.u_max + _BOX_TOL) | ~np.isfinite(th)
        )
        rejected |= out_of_box
        q = np.clip(q, 0.0, spec.q_max)
        u = np.clip(u, spec.u_min, spec.u_max)
        # stock stays in [0, x_max]
        u = np.clip(u, -X[:, k] / dt, (spec.x_max - X[:, k]) / dt)
        th = np.where(bad | ~np.isfinite(th), 0.0, th)

        if futures_mode == "ito":
            beta = pricing.forward_vol(fm, float(times[k]), D[:, k])
            mu_f = fm.risk.market_price(times[k], D[:, k]) * beta
            F[:, k + 1] = F[:, k] + mu_f * dt + beta * dw[:, k]

        pi = (q - u) * S[:, k] - cost.production(q) - cost.storage(X[:, k])
        X[:, k + 1] = np.clip(X[:, k] + u * dt, 0.0, spec.x_max)
        R[:, k + 1] = R[:, k] + pi * dt + th * (F[:, k + 1] - F[:, k])
        bad |= R[:, k + 1] < 0
        Q[:, k], U[:, k], TH[:, k], PI[:, k] = q, u, th, pi

    return PathBundle(times, D, S, F, X, R, Q, U, TH, PI, bad, rejected, spec.r0)


@dataclass(frozen=True)
class ClosureReport:
    """Terminal wealth with futures settled at F_T vs closed by physical delivery at S_T."""

    max_abs_discrepancy: float
    max_abs_expected: float
    max_abs_mismatch: float
    closed: bool


def delivery_closure_check(bundle, tol=1e-10):
    """Compare settlement and delivery accounting of the last futures position.

    Settlement marks the final position ``theta_{n-1}`` to ``F_T``; delivery
    closes it against the spot ``S_T``.  Their difference must be
    ``theta_{n-1} (F_T - S_T)``, and vanishes when ``F_T = S_T``.
    """
    dt = bundle.times[1] - bundle.times[0]
    base = bundle.r0 + dt * bundle.profit.sum(axis=1)
    dF = np.diff(bundle.futures, axis=1)
    settle = base + np.sum(bundle.theta * dF, axis=1)
    deliver = (
        base + np.sum(bundle.theta[:, :-1] * dF[:, :-1], axis=1)
        + bundle.theta[:, -1] * (bundle.spot[:, -1] - bundle.futures[:, -2])
    )
    disc = settle - deliver
    expected = bundle.theta[:, -1] * (bundle.futures[:, -1] - bundle.spot[:, -1])
    mismatch = float(np.max(np.abs(disc - expected)))
    return ClosureReport(
        float(np.max(np.abs(disc))), float(np.max(np.abs(expected))), mismatch,
        bool(np.max(np.abs(disc)) <= tol * max(1.0, float(np.max(np.abs(bundle.theta[:, -1]))))),
    )
