"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from scarcity_futures import config as config_mod
from scarcity_futures import control, pricing, sim, validation
from scarcity_futures.cli import run
from scarcity_futures.demand import RiskPrice, conditional_law, transition_factor
from scarcity_futures.pricing import FuturesModel

pytestmark = pytest.mark.acceptance


def record(number, title, passed, detail, elapsed=None, limit=None):
    timing = "" if elapsed is None else f" [{elapsed:.1f}s" + ("" if limit is None else f" / {limit:g}s") + "]"
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}{timing}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def cfg():
    return config_mod.build({})


@pytest.fixture(scope="module")
def hjb(cfg):
    """Benchmark solve with every time slice kept, shared by criteria 8 and 9."""
    t0 = time.perf_counter()
    vg = control.solve_hjb(cfg.futures, cfg.producer, cfg.grid, store_every=1)
    return vg, time.perf_counter() - t0


def test_criterion_01_terminal_convergence(cfg):
    t0 = time.perf_counter()
    chk = validation.terminal_consistency(cfg.futures, n_points=1000, lag=1e-4)
    dt = time.perf_counter() - t0
    ok = chk["passed"] and dt < 10
    record(1, "terminal convergence", ok, f"max gap {chk['max_gap']:.3e} <= {chk['tolerance']:.3e}", dt, 10)
    assert ok


def test_criterion_02_quadrature_vs_mc(cfg):
    t0 = time.perf_counter()
    chk = validation.quadrature_vs_mc(cfg.futures, cfg.seed, n_paths=100_000, n_se=3.0)
    dt = time.perf_counter() - t0
    ok = chk["passed"] and len(chk["points"]) == 20 and dt < 60
    record(2, "quadrature vs Monte-Carlo", ok, f"max z {chk['max_z']:.2f} over {len(chk['points'])} points (limit 3)", dt, 60)
    assert ok


def test_criterion_03_volatility(cfg):
    fm = cfg.futures
    t0 = time.perf_counter()
    fd = validation.vol_finite_difference(fm, h=1e-4, rtol=1e-4)
    curve = cfg.curve
    demands = np.linspace(curve["d_min"], curve["d_max"], int(curve["nd"]))
    nonneg, mono = validation.vol_shape(fm, [float(t) for t in curve["times"]], demands)
    # nonnegativity also over the finite-difference points and a wide demand sweep
    wide = min(float(np.min(pricing.forward_vol(fm, t, np.linspace(-10, 20, 601)))) for t in (0.0, 0.3, 0.6, 0.9))
    dt = time.perf_counter() - t0
    parts = {
        "fd agreement": fd["passed"] and len(fd["points"]) == 20,
        "vol >= 0": nonneg["passed"] and wide >= 0 and all(p["beta"] >= 0 for p in fd["points"]),
        "vol nondecreasing in d": mono["passed"],
    }
    ok = all(parts.values()) and dt < 10
    worst = min(mono["violations"], key=lambda v: v["worst_drop"], default=None)
    detail = f"fd max rel err {fd['max_rel_err']:.1e}; min vol {min(nonneg['min_vol'], wide):.2e}; " + (
        "monotone" if worst is None else
        f"{sum(v['n_drops'] for v in mono['violations'])} decreasing steps, worst {worst['worst_drop']:.2e} at t={worst['t']}, d={worst['worst_drop_at_d']:.2f}"
    ) + "; " + ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in parts.items())
    record(3, "volatility formula", ok, detail, dt, 10)
    assert ok


def test_criterion_04_martingale(cfg):
    t0 = time.perf_counter()
    chk = validation.martingale(cfg.futures, cfg.seed, n_paths=100_000, n_se=4.0)
    dt = time.perf_counter() - t0
    ok = chk["passed"] and len(chk["triples"]) == 5 and dt < 60
    record(4, "martingale / tower property", ok, f"max z {chk['max_z']:.2f} over 5 triples (limit 4)", dt, 60)
    assert ok


def test_criterion_05_girsanov(cfg):
    t0 = time.perf_counter()
    chk = validation.girsanov(cfg.futures, cfg.seed, n_paths=100_000)
    dt = time.perf_counter() - t0
    ok = chk["passed"] and dt < 30
    record(5, "Girsanov consistency", ok,
           f"E[L] z {chk['unit_mass']['z']:.2f}, E[L psi] z {chk['reweighted_price']['z']:.2f} (limit 4)", dt, 30)
    assert ok


def test_criterion_06_production_optimality(cfg):
    t0 = time.perf_counter()
    chk = validation.production_optimality(cfg.producer, cfg.seed, n_prices=100, n_grid=10_000, rtol=1e-6)
    dt = time.perf_counter() - t0
    ok = chk["passed"] and dt < 1
    record(6, "production optimality", ok, f"max relative excess of grid search {chk['max_rel_excess']:.1e}", dt, 1)
    assert ok


def test_criterion_07_conditional_law(cfg):
    fm = cfg.futures
    risk = RiskPrice((0.0, 0.4, 1.0), (0.15, -0.1), (0.5, -0.25))
    t0 = time.perf_counter()
    rows = [
        validation.conditional_law_moments(fm.demand, None, 0.0, 1.0, 1.0, cfg.seed, n_samples=100_000, tag=510),
        validation.conditional_law_moments(fm.demand, risk, 0.0, 1.0, 1.0, cfg.seed, n_samples=100_000, tag=511),
        validation.conditional_law_moments(fm.demand, risk, 0.2, 0.9, -0.5, cfg.seed, n_samples=100_000, tag=512),
    ]
    worst_add = 0.0
    for t, s, T in [(0.0, 0.4, 1.0), (0.0, 0.7, 1.0), (0.1, 0.3, 0.9), (0.35, 0.45, 0.55), (0.0, 1e-6, 1.0)]:
        whole = conditional_law(fm.demand, risk, t, T, 0.0).variance
        parts = (transition_factor(fm.demand, risk, s, T) ** 2 * conditional_law(fm.demand, risk, t, s, 0.0).variance
                 + conditional_law(fm.demand, risk, s, T, 0.0).variance)
        worst_add = max(worst_add, abs(parts - whole) / whole)
    dt = time.perf_counter() - t0
    ok = all(r["passed"] for r in rows) and worst_add <= 1e-10 and dt < 30
    zmax = max(max(r["z_mean"], r["z_var"]) for r in rows)
    record(7, "conditional law", ok, f"max moment z {zmax:.2f} (limit 4) under P and Q; additivity rel err {worst_add:.1e}", dt, 30)
    assert ok


def test_criterion_08_hjb_coherence(cfg, hjb):
    vg, solve_time = hjb
    fm, spec, grid = cfg.futures, cfg.producer, cfg.grid
    assert (grid.nr, grid.nx, grid.nd) == (41, 41, 61) and grid.nt is None
    t0 = time.perf_counter()
    terminal = bool(np.array_equal(vg.values[-1], np.broadcast_to((vg.r ** spec.gamma)[:, None, None], vg.values[-1].shape)))
    min_inc = float(np.min(np.diff(vg.values, axis=1)))

    neutral = FuturesModel(fm.demand, RiskPrice.zero(fm.maturity), fm.spot, fm.maturity, fm.quad_order, fm.mc_paths)
    vg0 = control.solve_hjb(neutral, spec, grid)
    no_trade = bool(np.all(vg0.policy_theta[:, 1:-1, :, 1:-1] == 0))

    v0 = vg.value_at(spec.r0, spec.x0, fm.demand.d0)
    rng = lambda: np.random.default_rng([cfg.seed, 800])
    opt = control.evaluate_policy(fm, spec, control.PolicyRule(vg, fm, spec), 10_000, vg.nt, rng())
    zero = control.evaluate_policy(fm, spec, sim.zero_policy(spec), 10_000, vg.nt, rng())
    myo = control.evaluate_policy(fm, spec, control.myopic_policy(fm, spec), 10_000, vg.nt, rng())
    rel = abs(opt.mean - v0) / v0
    beats = opt.mean >= zero.mean - 2 * opt.std_err and opt.mean >= myo.mean - 2 * opt.std_err
    dt = time.perf_counter() - t0 + solve_time
    ok = terminal and min_inc >= 0 and no_trade and rel <= 0.05 and beats and dt < 900
    record(8, "HJB coherence", ok,
           f"nt={vg.nt} (max CFL {vg.meta['max_cfl']:.2f}); terminal {'exact' if terminal else 'WRONG'}; "
           f"min r-increment {min_inc:.2e}; theta==0 without risk price: {no_trade}; "
           f"v0 {v0:.5f} vs optimal {opt.mean:.5f}+-{opt.std_err:.1e} (rel {rel:.2%}), "
           f"zero {zero.mean:.5f}, myopic {myo.mean:.5f}", dt, 900)
    assert ok


def test_criterion_09_long_position(cfg, hjb):
    vg, _ = hjb
    fm = cfg.futures
    assert vg.times.size == vg.nt + 1
    dr = vg.r[1] - vg.r[0]
    tested = bad = 0
    for k in range(vg.nt):
        # theta at step k is chosen against the value one step later
        V = vg.values[k + 1]
        vrr = np.full_like(V, np.nan)
        vrr[1:-1] = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / dr ** 2
        mu = pricing.forward_drift(fm, float(vg.times[k]), vg.d)[None, None, :]
        mask = (mu > 0) & (vrr < 0)
        mask[0] = mask[-1] = False
        mask[:, :, 0] = mask[:, :, -1] = False
        tested += int(mask.sum())
        bad += int(np.count_nonzero(vg.policy_theta[k][mask] <= 0))
    ok = tested > 0 and bad == 0
    record(9, "long position under positive drift", ok, f"{bad} violations at {tested} interior node-steps")
    assert ok


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    codes = [run(["validate", "--out", str(tmp_path / name)]) for name in ("first", "second")]
    a = (tmp_path / "first" / "validate.json").read_bytes()
    b = (tmp_path / "second" / "validate.json").read_bytes()
    dt = time.perf_counter() - t0
    ok = a == b
    record(10, "determinism", ok, f"validate reports byte-identical: {ok} ({len(a)} bytes, exit codes {codes})", dt)
    assert ok
