import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_discounted
from quantcmdp.discounted import (
    build_occupation_lp,
    dual_function,
    dual_function_sweep,
    lagrangian_value_iteration,
    maximize_dual,
    solve_discounted,
    solve_discounted_dual,
    straddle_level,
)
from quantcmdp.families import random_finite_cmdp, toy2
from quantcmdp.policy import InfeasibleError, StationaryPolicy
from quantcmdp.quantize import FiniteCMDP


def plain_value_iteration(P, c, beta, tol=1e-13):
    u = np.zeros(P.shape[1])
    while True:
        un = (c + beta * np.einsum("aij,j->ia", P, u)).min(axis=1)
        if np.abs(un - u).max() < tol:
            return un
        u = un


def brute_force_toy2(fm, steps=101):
    """Minimum over the 0.01 grid of randomized policies (one free
    probability per state) with exact linear-solve evaluation."""
    p = np.linspace(0.0, 1.0, steps)
    p1, p2 = np.meshgrid(p, p, indexing="ij")
    pi = np.zeros((steps, steps, 2, 2))
    pi[..., 0, 1], pi[..., 0, 0] = p1, 1 - p1
    pi[..., 1, 1], pi[..., 1, 0] = p2, 1 - p2
    v, j = exact_discounted(fm.P, fm.c, fm.d, fm.gamma, fm.beta, pi)
    ok = (j <= fm.k + 1e-12).all(axis=-1)
    return v[ok].min()


def test_lp_dimensions():
    lp = build_occupation_lp(toy2())
    assert lp.n_vars == 5 and lp.n_rows == 3


def test_unconstrained_lp_matches_value_iteration():
    rng = np.random.default_rng(0)
    fm = random_finite_cmdp(rng, 5, 3, 0, beta=0.9)
    sol = solve_discounted(fm)
    u = plain_value_iteration(fm.P, fm.c, fm.beta)
    assert sol.value == pytest.approx((1 - fm.beta) * fm.gamma @ u, abs=1e-7)


def test_small_discount_is_nearly_myopic():
    rng = np.random.default_rng(1)
    fm = random_finite_cmdp(rng, 6, 3, 0, beta=0.01)
    sol = solve_discounted(fm)
    myopic = fm.gamma @ fm.c.min(axis=1)
    assert abs(sol.value - myopic) <= 2 * fm.beta * np.abs(fm.c).max()


def test_inactive_constraint_has_zero_multiplier():
    fm = toy2(k=1.5)
    sol = solve_discounted(fm)
    assert sol.dual.delta.tolist() == [0.0]
    free = solve_discounted(FiniteCMDP(fm.P, fm.c, np.zeros((0, 2, 2)), fm.gamma, [], fm.beta))
    assert sol.value == pytest.approx(free.value, abs=1e-12)


def test_toy2_matches_policy_grid_brute_force():
    fm = toy2()
    sol = solve_discounted(fm)
    bf = brute_force_toy2(fm)
    assert sol.value <= bf + 1e-12
    assert bf - sol.value <= 1e-3
    assert sol.value == pytest.approx(0.5822222222222222, abs=1e-12)


def test_relabeling_invariance():
    rng = np.random.default_rng(5)
    fm = random_finite_cmdp(rng, 5, 3, 1)
    perm = rng.permutation(5)
    P = fm.P[:, perm][:, :, perm]
    fp = FiniteCMDP(P, fm.c[perm], fm.d[:, perm], fm.gamma[perm], fm.k, fm.beta)
    assert solve_discounted(fp).value == pytest.approx(solve_discounted(fm).value, abs=1e-10)


def test_infeasible_levels_raise():
    with pytest.raises(InfeasibleError, match="infeasible"):
        solve_discounted(toy2().with_k([-0.1]))


def test_lagrangian_value_iteration_examples():
    fm = toy2()
    u0 = lagrangian_value_iteration(fm, [0.0], tol=1e-12)
    assert np.allclose(u0, plain_value_iteration(fm.P, fm.c, fm.beta), atol=1e-11)
    u1 = lagrangian_value_iteration(fm, [-1.0], tol=1e-12)
    assert np.allclose(u1, plain_value_iteration(fm.P, fm.c + fm.d[0], fm.beta), atol=1e-11)
    one = FiniteCMDP(np.ones((3, 1, 1)), np.array([[0.3, 0.1, 0.5]]),
                     np.array([[[0.0, 1.0, 0.0]]]), [1.0], [0.5], 0.7)
    u = lagrangian_value_iteration(one, [-0.5], tol=1e-13)
    assert u[0] == pytest.approx(min(0.3, 0.1 + 0.5, 0.5) / (1 - 0.7), abs=1e-12)
    with pytest.raises(ValueError):
        lagrangian_value_iteration(fm, [0.5])


def test_batched_iteration_matches_single():
    fm = toy2()
    deltas = np.array([[0.0], [-0.3], [-2.0]])
    batch = lagrangian_value_iteration(fm, deltas, tol=1e-12)
    for b, dl in enumerate(deltas):
        assert np.allclose(batch[b], lagrangian_value_iteration(fm, dl, tol=1e-12), atol=1e-11)


def test_sweep_on_inactive_constraint_picks_zero():
    delta, _ = dual_function_sweep(toy2(k=1.5), 5.0, 200)
    assert delta.tolist() == [0.0]


def test_sweep_lower_bounds_and_converges_on_toy2():
    fm = toy2()
    lp = solve_discounted(fm).value
    gaps = []
    for pts in (10, 100, 1000, 5000):
        _, g = dual_function_sweep(fm, 5.0, pts)
        assert g <= lp + 1e-6
        gaps.append(lp - g)
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-4


def test_dual_function_is_lipschitz():
    rng = np.random.default_rng(3)
    fm = random_finite_cmdp(rng, 6, 3, 2)
    M = (1 - fm.beta) * np.abs(fm.d).max() + fm.k.max()
    for _ in range(10):
        a, b = -rng.random(2) * 3, -rng.random(2) * 3
        ga, _ = dual_function(fm, a, tol=1e-12)
        gb, _ = dual_function(fm, b, tol=1e-12)
        assert abs(ga - gb) <= M * np.abs(a - b).sum() + 1e-9


def test_monotone_operator_preserves_subsolutions():
    rng = np.random.default_rng(4)
    fm = random_finite_cmdp(rng, 5, 3, 1)
    delta = np.array([-0.7])
    cd = fm.c - delta[0] * fm.d[0]
    T = lambda v: (cd + fm.beta * np.einsum("aij,j->ia", fm.P, v)).min(axis=1)  # noqa: E731
    ustar = lagrangian_value_iteration(fm, delta, tol=1e-13)
    for _ in range(5):
        # T u >= u* - beta m max(w) >= u* - m w = u whenever w lies in [beta, 1]
        w = rng.uniform(fm.beta, 1.0, size=5)
        u = ustar - rng.uniform(0.1, 5.0) * w
        assert (u <= T(u) + 1e-12).all()
        for _ in range(30):
            un = T(u)
            assert (un >= u - 1e-12).all()
            assert (un <= ustar + 1e-9).all()
            u = un


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.integers(2, 4), st.integers(0, 2))
def test_solution_invariants(seed, n, A, q):
    fm = random_finite_cmdp(np.random.default_rng(seed), n, A, q)
    sol = solve_discounted(fm)
    r = sol.residuals
    assert r["mass"] <= 1e-8 and r["balance"] <= 1e-8 and r["relative_gap"] <= 1e-8
    assert r["dual_violation"] <= 1e-8
    assert isinstance(sol.policy, StationaryPolicy)
    assert np.allclose(sol.policy.table.sum(axis=1), 1.0)
    assert sol.policy.randomized_states().size <= q
    v, j = exact_discounted(fm.P, fm.c, fm.d, fm.gamma, fm.beta, sol.policy.table)
    assert v == pytest.approx(sol.value, abs=1e-8)
    assert (j <= fm.k + 1e-8).all()
    # weak duality at any nonpositive multiplier
    g, _ = dual_function(fm, -np.random.default_rng(seed).random(q), tol=1e-12)
    assert g <= sol.value + 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 7), st.integers(2, 4))
def test_dual_route_agrees_with_lp(seed, n, A):
    fm = random_finite_cmdp(np.random.default_rng(seed), n, A, 1)
    lp = solve_discounted(fm)
    K = 2 * np.abs(fm.c).max() / 0.04
    du = solve_discounted_dual(fm, K)
    assert du.value == pytest.approx(lp.value, abs=1e-7)
    assert du.residuals["balance"] <= 1e-10 and du.residuals["mass"] <= 1e-10
    assert du.constraint_values[0] <= fm.k[0] + 1e-9


def test_cutting_planes_for_two_constraints():
    fm = random_finite_cmdp(np.random.default_rng(8), 6, 3, 2)
    lp = solve_discounted(fm).value
    res = maximize_dual(fm, 2 * np.abs(fm.c).max() / 0.04, tol=1e-8)
    assert res.value <= lp + 1e-8
    assert res.value == pytest.approx(lp, abs=1e-6)


def test_straddle_finds_switch_left_of_a_stalled_search():
    # greedy constraint cost steps down at -0.5; the search stopped at -0.4999
    def greedy_at(x):
        return np.array([x]), (0.1 if x < -0.5 else 0.2)

    (z_lo, j_lo), (z_hi, j_hi) = straddle_level(greedy_at, -0.4999, 0.15, 10.0, 1e-6, 1e-9)
    assert j_lo == 0.1 and j_hi == 0.2
    assert -0.5 - 1e-9 <= z_lo[0] < -0.5 <= z_hi[0] <= -0.5 + 1e-9
    with pytest.raises(InfeasibleError):
        straddle_level(lambda x: (None, 0.2), -0.4999, 0.15, 10.0, 1e-6, 1e-9)
