import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scarcity_futures.errors import DomainError
from scarcity_futures.market import (
    CostSpec,
    ProducerSpec,
    SpotMap,
    marginal_cost_f,
    profit_rate,
    q_star,
    scarcity_g,
    spot_psi,
)


def producer(c_lin=0.0, c_quad=0.5, k_lin=0.0, k_quad=0.01, q_max=2.0):
    return ProducerSpec(CostSpec(c_lin, c_quad, k_lin, k_quad), q_max=q_max, u_min=-1.0, u_max=1.0,
                        x_max=1.0, x0=0.0, r0=1.0, gamma=0.5)


def test_scarcity_g_branches():
    assert scarcity_g(2 * 0.3, 0.3) == pytest.approx(1 / 0.6)
    assert scarcity_g(-1.0, 0.5) == 2.0
    assert scarcity_g(0.15, 0.3) == pytest.approx(1 / 0.3)
    with pytest.raises(DomainError):
        scarcity_g(1.0, 0.0)


@settings(max_examples=100)
@given(st.floats(0.01, 5.0), st.floats(-50.0, 50.0))
def test_scarcity_g_is_reciprocal_above_floor(eps, x):
    expected = 1.0 / x if x >= eps else 1.0 / eps
    assert scarcity_g(x, eps) == expected


def test_marginal_cost_f(spot_map):
    assert marginal_cost_f(0.0, spot_map) == 0.0
    assert marginal_cost_f(4.0, spot_map) == 2.0
    assert marginal_cost_f(100.0, spot_map) == 3.0
    assert marginal_cost_f(-2.0, spot_map) == 0.0


def test_spot_psi_examples(spot_map):
    assert spot_psi(-1.0, spot_map) == 0.0
    assert spot_psi(4.0, spot_map) == pytest.approx(2.0 / 6.0, rel=1e-15)
    assert spot_psi(9.5, spot_map) == pytest.approx(3.0, rel=1e-15)
    assert spot_map.bound == 3.0
    assert spot_map.psi(4.0) == spot_psi(4.0, spot_map)
    out = spot_psi(np.array([-1.0, 4.0]), spot_map)
    assert out.shape == (2,)


def test_spot_psi_monotone_bounded(spot_map):
    d = np.linspace(-spot_map.cbar, 2 * spot_map.cbar, 10_000)
    s = spot_psi(d, spot_map)
    assert np.all(np.diff(s) >= 0)
    assert np.all((s >= 0) & (s <= spot_map.bound))


def test_spot_psi_continuous(spot_map):
    jumps = []
    for n in (10**3, 10**4, 10**5):
        d = np.linspace(-spot_map.cbar, 2 * spot_map.cbar, n)
        jumps.append(np.max(np.abs(np.diff(spot_psi(d, spot_map)))))
    assert jumps[0] > jumps[1] > jumps[2]
    # sqrt onset at 0 dominates: jump ~ sqrt(h)
    assert jumps[2] < 0.01


@pytest.mark.parametrize("kw", [
    dict(b=0.0), dict(cbar=0.0), dict(eps=10.0), dict(alpha_exp=1.0), dict(cap_m=5.0),
])
def test_spot_map_invariants(kw):
    base = dict(b=1.0, cbar=10.0, eps=1.0, alpha_exp=0.5, cap_m=9.0)
    with pytest.raises(DomainError):
        SpotMap(**(base | kw))


def test_q_star_examples():
    spec = producer()
    assert q_star(1.5, spec) == pytest.approx(1.5)
    assert q_star(5.0, spec) == 2.0
    grid = np.linspace(0.0, 2.0, 10_000)
    assert q_star(5.0, spec) == grid[np.argmax(grid * 5.0 - 0.5 * grid ** 2)]
    assert q_star(0.2, producer(c_lin=0.3)) == 0.0


def test_q_star_beats_brute_force(rng):
    spec = producer(c_lin=0.1, c_quad=0.3, q_max=1.5)
    grid = np.linspace(0.0, spec.q_max, 10_000)
    for s in rng.uniform(0.0, 2.0, 100):
        qs = q_star(s, spec)
        best = np.max(grid * s - spec.cost.production(grid))
        mine = qs * s - spec.cost.production(qs)
        assert best - mine <= 1e-6 * max(abs(best), 1e-300)


def test_profit_examples():
    spec = producer()
    assert profit_rate(0.0, 0.0, 1.7, 0.0, spec) == 0.0
    unit = ProducerSpec(CostSpec(0.0, 1.0, 1.0, 0.0), 2.0, -1.0, 1.0, 1.0, 0.0, 1.0, 0.5)
    assert profit_rate(1.0, 0.0, 2.0, 0.5, unit) == pytest.approx(0.5)
    assert profit_rate(0.0, 1.0, 2.0, 0.0, unit) == pytest.approx(-2.0)


@pytest.mark.parametrize("q,u,x", [(-0.1, 0, 0), (2.1, 0, 0), (0, 1.5, 0), (0, -1.5, 0), (0, 0, 1.2), (0, 0, -0.1)])
def test_profit_rejects_box_violation(q, u, x):
    with pytest.raises(DomainError):
        profit_rate(q, u, 1.0, x, producer())


def test_profit_concave_in_q_linear_in_u():
    spec = producer(c_lin=0.1, c_quad=0.3)
    h = 1e-3
    for q in np.linspace(0.1, 1.9, 7):
        second = profit_rate(q + h, 0.2, 1.1, 0.4, spec) - 2 * profit_rate(q, 0.2, 1.1, 0.4, spec) + profit_rate(q - h, 0.2, 1.1, 0.4, spec)
        assert second <= 0
    for u in np.linspace(-0.9, 0.9, 7):
        second = profit_rate(1.0, u + h, 1.1, 0.4, spec) - 2 * profit_rate(1.0, u, 1.1, 0.4, spec) + profit_rate(1.0, u - h, 1.1, 0.4, spec)
        assert abs(second) < 1e-12


@pytest.mark.parametrize("kw", [dict(c_quad=0.0), dict(c_lin=-1.0), dict(k_lin=0.0, k_quad=0.0), dict(k_quad=-0.1)])
def test_cost_invariants(kw):
    base = dict(c_lin=0.0, c_quad=0.5, k_lin=0.0, k_quad=0.01)
    with pytest.raises(DomainError):
        CostSpec(**(base | kw))


def test_storage_cost_vanishes_at_zero():
    assert CostSpec(0.0, 0.5, 0.2, 0.3).storage(0.0) == 0.0


@pytest.mark.parametrize("kw", [dict(q_max=-1.0), dict(u_min=0.5), dict(x0=2.0), dict(r0=0.0), dict(gamma=1.0)])
def test_producer_invariants(kw):
    base = dict(cost=CostSpec(0.0, 0.5, 0.0, 0.01), q_max=1.0, u_min=-1.0, u_max=1.0, x_max=1.0, x0=0.0, r0=1.0, gamma=0.5)
    with pytest.raises(DomainError):
        ProducerSpec(**(base | kw))
