import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import stationary_law
from quantcmdp.evaluate import exact_eval_finite, mc_eval_original
from quantcmdp.model import (
    ActionGrid,
    ContinuousCMDP,
    CostSpec,
    InitialDistribution,
    MinorizationData,
    RegularityData,
    StateSpace,
    TransitionSpec,
)
from quantcmdp.policy import StationaryPolicy, extend_policy, solve_finite
from quantcmdp.quantize import build_finite_model, build_grid
from quantcmdp.rates import (
    GridTooCoarse,
    H_g,
    RateConstants,
    Y_v,
    average_eps_curves,
    average_value_bound,
    discounted_threshold,
    discounted_value_bound,
    eps_g_closed_form,
    grid_threshold_average,
    grid_threshold_discounted,
    policy_eval_bound,
)


def _rc(**kw):
    base = dict(alpha_cov=1.0, dim=1, beta=0.5, q=0, K_c=1.0, K_l=(), K_p=1.0, G_p=1.0,
                sup_c=1.0, sup_d=(), alpha_slater_min=0.5, kappa_erg=0.5)
    base.update(kw)
    return RateConstants(**base)


def test_discounted_value_bound_examples():
    rc = _rc()
    assert Y_v(rc) == pytest.approx(8.0)
    assert discounted_value_bound(16, rc) == pytest.approx(0.5)
    vals = [discounted_value_bound(n, rc) for n in (1, 10, 100, 10 ** 4)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError, match="beta"):
        Y_v(_rc(K_p=2.0))


def test_policy_eval_bound_examples():
    rc = _rc(G_p=0.0, alpha_cov=0.7)
    assert H_g(rc, 3.0, 5.0) == pytest.approx(2 * 0.7 * 3.0)
    assert H_g(_rc(alpha_cov=0.7), 3.0, 0.0) == pytest.approx(2 * 0.7 * 3.0)
    assert policy_eval_bound(4, _rc(dim=2), 1.0, 1.0) == pytest.approx(
        (1 + 1 / 0.5) * 2 * 0.5)


def test_discounted_threshold_examples():
    assert discounted_threshold(1.0, 8.0, 4.0, 1.0, 2.0, 1) == 24
    assert discounted_threshold(0.5, 8.0, 4.0, 1.0, 2.0, 1) == 48
    assert discounted_threshold(1.0, 8.0, 4.0, 1.0, 2.0, 2) == 576
    n, eps = grid_threshold_discounted(0.3, _rc(q=1, K_l=(1.0,), sup_d=(1.0,)))
    assert eps == pytest.approx(0.3 / (3 * 4.0))
    assert n >= (3 * 8.0 / 0.3) ** 1


def test_eps_curve_closed_form_example():
    # I_1 = I_3 = 1, I_2 = 0, I_4 = 1, kappa = 1/e
    rc = _rc(sup_c=0.5, R=1.0, K_c=0.0, G_p=1.0, alpha_cov=1.0, kappa_erg=math.exp(-1))
    assert rc.I_c == pytest.approx((1.0, 0.0, 1.0, 1.0))
    cur = average_eps_curves(math.e ** 2, rc)
    assert cur.t_prime == pytest.approx(2.0)
    assert cur.eps_c == pytest.approx(3 * math.exp(-2))
    assert eps_g_closed_form(math.e ** 2, rc, 0.5, 0.0) == pytest.approx(3 * math.exp(-2))


def test_eps_curve_vanishes_and_clamps():
    rc = _rc(q=1, K_l=(1.0,), sup_d=(1.0,))
    vals = [average_eps_curves(10.0 ** j, rc).eps_c for j in range(2, 12, 2)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-8
    big = _rc(G_p=100.0)
    with pytest.warns(UserWarning, match="clamped"):
        cur = average_eps_curves(2, big)
    assert cur.clamped and cur.t == 1


def test_average_value_bound_gate():
    rc = _rc(q=1, K_l=(0.1,), sup_d=(0.4,), alpha_slater_min=0.12, kappa_erg=0.8)
    with pytest.raises(GridTooCoarse, match="grid too coarse for average-cost bound"):
        average_value_bound(16, rc)
    # the first cardinality passing the gate gives a finite bound
    n = 1
    while True:
        try:
            val = average_value_bound(n, rc)
            break
        except GridTooCoarse:
            n += 1
    assert average_eps_curves(n, rc).eps_max < 0.06 <= average_eps_curves(n - 1, rc).eps_max
    assert np.isfinite(val) and val > 0


def test_average_threshold_postconditions():
    rc = _rc(q=1, K_l=(0.5,), sup_d=(0.5,), kappa_erg=0.5)
    kappa = 0.5

    def ok(n):
        cur = average_eps_curves(n, rc)
        return kappa / 3 >= 2 * cur.eps_c + max(2 * rc.K, 1.0) * cur.eps_max

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        n, eps = grid_threshold_average(kappa, rc)
        assert ok(n) and not ok(n - 1) and not ok(n // 2)
    assert eps == pytest.approx(kappa / (3 * rc.K))
    assert grid_threshold_average(1e6, rc)[0] == 1
    needed = [grid_threshold_average(kappa, _rc(q=1, K_l=(0.5,), sup_d=(0.5,), kappa_erg=k))[0]
              for k in (0.3, 0.5, 0.7, 0.9)]
    assert all(b >= a for a, b in zip(needed, needed[1:]))
    with pytest.raises(GridTooCoarse, match="gap"):
        grid_threshold_average(1e-9, rc, cap=1024)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.1, 0.9), st.integers(1, 3))
def test_bounds_nonincreasing_in_n(kappa, kerg, dim):
    rc = _rc(dim=dim, kappa_erg=kerg, q=1, K_l=(0.5,), sup_d=(0.5,))
    ns = [2.0 ** j for j in range(4, 40, 3)]
    dv = [discounted_value_bound(n, rc) for n in ns]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curves = [average_eps_curves(n, rc) for n in ns]
    ec = [c.eps_c for c in curves if not c.clamped]
    assert all(b <= a for a, b in zip(dv, dv[1:]))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(ec, ec[1:]))
    assert min(dv + ec) >= 0


# A finite-rank kernel f(y | x, a) = 1 + theta_a (x - 1/2) cos(pi y) on [0, 1]
# whose invariant densities, TV modulus and minorization are all explicit.
THETAS = np.array([0.4, 1.2])
TV_COS = 2.0 / math.pi  # int |cos(pi y)| dy


def _rank_one_model():
    space = StateSpace(np.zeros(1), np.ones(1))

    def density(y, x, a):
        return 1.0 + a[0] * (x[:, :1] - 0.5) * np.cos(np.pi * y[:, 0])[None, :]

    def axis_mass(x, a, k, edges):
        s = np.diff(np.sin(np.pi * edges)) / np.pi
        return np.diff(edges)[None, :] + a[0] * (x[:, :1] - 0.5) * s[None, :]

    def sampler(x, a, rng):
        out = np.empty_like(x)
        todo = np.arange(x.shape[0])
        while todo.size:
            y = rng.random(todo.size)
            acc = rng.random(todo.size) * 1.6 <= 1 + a[todo, 0] * (x[todo, 0] - 0.5) * np.cos(np.pi * y)
            out[todo[acc], 0] = y[acc]
            todo = todo[~acc]
        return out

    gamma = InitialDistribution(lambda y: np.ones(y.shape[0]),
                                lambda rng, size: rng.random((size, 1)),
                                lambda k, edges: np.diff(edges))
    costs = CostSpec(c=lambda x, a: x[:, 0] + 0.2 * a[:, 0], d=(), k=[], beta=0.9, gamma=gamma,
                     sup_c=1.24, sup_d=())
    mino = MinorizationData((np.array([0.0, 1.0]),), (np.array([1.0]),),
                            phi=lambda x, a: 1 - a[:, 0] * np.abs(x[:, 0] - 0.5), alpha_min=0.6)
    reg = RegularityData(K_c=1.0, K_l=(), K_p=1.2, G_p=1.2 * TV_COS, minorization=mino,
                         alpha_slater=(1.0,))
    return ContinuousCMDP(space, ActionGrid(THETAS[:, None]),
                          TransitionSpec(density, sampler, axis_mass, separable=True),
                          costs, reg, name="rank1")


def _rank_one_average(edges, table):
    """Exact average cost of the extended policy on the continuous chain.

    The invariant density is 1 + m cos(pi x) with m = A / (1 - B).
    """
    lo, hi = edges[:-1], edges[1:]
    th = table @ THETAS
    int_lin = 0.5 * (hi ** 2 - lo ** 2) - 0.5 * (hi - lo)  # int (x - 1/2)

    def int_xcos(e):
        return e * np.sin(np.pi * e) / np.pi + np.cos(np.pi * e) / np.pi ** 2

    int_cos = (np.sin(np.pi * hi) - np.sin(np.pi * lo)) / np.pi
    int_xc = int_xcos(hi) - int_xcos(lo)
    A = th @ int_lin
    B = th @ (int_xc - 0.5 * int_cos)
    m = A / (1.0 - B)
    # cost x + 0.2 theta against the density 1 + m cos(pi x)
    return (0.5 - 2.0 * m / np.pi ** 2) + 0.2 * th @ ((hi - lo) + m * int_cos)


def test_average_cost_gap_within_eps_c_on_rank_one_chain():
    model = _rank_one_model()
    rc = RateConstants.from_model(model, alpha_cov=0.5)
    assert rc.kappa_erg == 0.6
    rng = np.random.default_rng(2)
    for n in (5, 10, 20, 40, 80):
        grid = build_grid(model.space, n)
        fm = build_finite_model(model, grid)
        tabs = rng.dirichlet(np.ones(2), size=(200, n))
        tabs[:20] = np.eye(2)[rng.integers(0, 2, size=(20, n))]
        mu = stationary_law(np.einsum("pia,aij->pij", tabs, fm.P))
        finite = np.einsum("pi,pi->p", mu, np.einsum("pia,ia->pi", tabs, fm.c))
        exact = np.array([_rank_one_average(grid.axis_edges[0], t) for t in tabs])
        gap = np.abs(finite - exact).max()
        assert 0 < gap <= average_eps_curves(n, rc).eps_c, n


def test_rank_one_oracle_matches_long_simulation():
    model = _rank_one_model()
    grid = build_grid(model.space, 5)
    pol = StationaryPolicy(np.random.default_rng(0).dirichlet(np.ones(2), size=5))
    ev = mc_eval_original(model, extend_policy(pol, grid), "average", horizon=2000,
                          replications=200, burn_in=20, seed=1)
    exact = _rank_one_average(grid.axis_edges[0], pol.table)
    assert abs(ev.value - exact) <= ev.value_hw


def test_inv1_discounted_bound_at_256(inv1_model, inv1_reference):
    rc = RateConstants.from_model(inv1_model)
    fm = build_finite_model(inv1_model, build_grid(inv1_model.space, 256))
    err = abs(solve_finite(fm).value - inv1_reference["discounted"])
    assert err <= discounted_value_bound(256, rc)


def test_inv1_average_bound_needs_512(inv1_model, inv1_reference):
    rc = RateConstants.from_model(inv1_model)
    with pytest.raises(GridTooCoarse):
        average_value_bound(256, rc)
    fm = build_finite_model(inv1_model, build_grid(inv1_model.space, 512))
    err = abs(solve_finite(fm, "average").value - inv1_reference["average"])
    assert err <= average_value_bound(512, rc)


def test_inv1_policy_eval_bound_at_128(inv1_model):
    rc = RateConstants.from_model(inv1_model)
    grid = build_grid(inv1_model.space, 128)
    fm = build_finite_model(inv1_model, grid)
    sol = solve_finite(fm)
    exact, _ = exact_eval_finite(fm, sol.policy)
    ev = mc_eval_original(inv1_model, extend_policy(sol.policy, grid), horizon=80,
                          replications=4000, seed=21)
    bound = policy_eval_bound(128, rc, rc.K_c, rc.sup_c)
    assert abs(exact - ev.value) <= bound + ev.value_hw + ev.bias_bound
