import dataclasses

import numpy as np
import pytest

from quantcmdp.evaluate import (
    estimate_slater,
    exact_eval_finite,
    mc_eval_original,
    tstep_tv_discrepancy,
)
from quantcmdp.families import inv1, toy2
from quantcmdp.policy import StationaryPolicy, extend_policy, perturbed_solve, solve_finite
from quantcmdp.quantize import FiniteCMDP, Surrogate, build_finite_model, build_grid
from test_model import _clip_model


def _first_action(x):
    out = np.zeros((x.shape[0], 3))
    out[:, 0] = 1.0
    return out


def test_exact_eval_examples():
    fm = toy2()
    for crit in ("discounted", "average"):
        sol = solve_finite(fm, crit)
        v, j = exact_eval_finite(fm, sol.policy, crit)
        assert v == pytest.approx(sol.value, abs=1e-8)
        assert j[0] == pytest.approx(sol.constraint_values[0], abs=1e-8)
    ones = FiniteCMDP(fm.P, np.ones((2, 2)), fm.d, fm.gamma, fm.k, fm.beta)
    rand = StationaryPolicy(np.array([[0.3, 0.7], [0.9, 0.1]]))
    assert exact_eval_finite(ones, rand)[0] == pytest.approx(1.0, abs=1e-14)
    # uniform policy: 2x2 system written out by hand
    Pu = 0.5 * (fm.P[0] + fm.P[1])
    cu = 0.5 * (fm.c[:, 0] + fm.c[:, 1])
    b = fm.beta
    a11, a12, a21, a22 = 1 - b * Pu[0, 0], -b * Pu[0, 1], -b * Pu[1, 0], 1 - b * Pu[1, 1]
    det = a11 * a22 - a12 * a21
    v0 = (1 - b) * (a22 * cu[0] - a12 * cu[1]) / det
    v1 = (1 - b) * (a11 * cu[1] - a21 * cu[0]) / det
    uni = StationaryPolicy(np.full((2, 2), 0.5))
    v, j = exact_eval_finite(fm, uni)
    assert v == pytest.approx(0.5 * v0 + 0.5 * v1, abs=1e-14)
    assert j[0] == pytest.approx(0.5, abs=1e-14)


def test_unit_payoff_is_deterministic():
    model = inv1()
    ext, _ = perturbed_solve(model, build_grid(model.space, 8), 0.0)
    ev = mc_eval_original(model, ext, horizon=25, replications=50,
                          g=lambda x, a: np.ones(x.shape[0]))
    assert ev.value == pytest.approx(1 - model.beta ** 26, abs=1e-12)
    assert ev.value_hw == pytest.approx(0.0, abs=1e-12)


def test_same_seed_is_bitwise_identical():
    model = inv1()
    ext, _ = perturbed_solve(model, build_grid(model.space, 8), 0.0)
    for crit in ("discounted", "average"):
        a = mc_eval_original(model, ext, crit, horizon=40, replications=300, seed=5)
        b = mc_eval_original(model, ext, crit, horizon=40, replications=300, seed=5)
        assert a.to_dict() == b.to_dict()
        assert a.value_hw >= 0 and (a.constraints_hw >= 0).all()
    assert a.bias_bound == 0.0


def test_discounted_bias_bound_is_geometric_tail():
    model = inv1()
    ext, _ = perturbed_solve(model, build_grid(model.space, 8), 0.0)
    ev = mc_eval_original(model, ext, horizon=10, replications=10)
    sup_c, sup_d = model.sup_norms()
    assert ev.bias_bound == pytest.approx(model.beta ** 11 * sup_c)
    assert np.allclose(ev.constraints_bias, model.beta ** 11 * np.asarray(sup_d))
    long = mc_eval_original(model, ext, horizon=120, replications=2000, seed=1)
    short = mc_eval_original(model, ext, horizon=10, replications=2000, seed=1)
    # common random numbers: the truncated sums differ by the tail alone
    assert 0.0 <= long.value - short.value <= ev.bias_bound + 1e-12


def test_fine_grid_policy_matches_finite_value():
    model = inv1()
    grid = build_grid(model.space, 512)
    fm = build_finite_model(model, grid)
    sol = solve_finite(fm)
    ext = extend_policy(sol.policy, grid)
    ev = mc_eval_original(model, ext, horizon=80, replications=20000, seed=12)
    exact, _ = exact_eval_finite(fm, sol.policy)
    assert abs(ev.value - exact) <= ev.value_hw + ev.bias_bound


def test_surrogate_simulation_converges_to_finite_value():
    model = inv1()
    grid = build_grid(model.space, 16)
    fm = build_finite_model(model, grid)
    sol = solve_finite(fm)
    ext = extend_policy(sol.policy, grid)
    N = 10 ** 5
    ev = mc_eval_original(model, ext, horizon=80, replications=N, seed=4,
                          surrogate=Surrogate(model, grid, fm))
    se = ev.value_hw / 2.5758293035489
    assert abs(ev.value - sol.value) <= 4 * se + ev.bias_bound


def test_slater_examples():
    model = _clip_model()
    est = estimate_slater(model, _first_action, replications=200)
    assert est.alpha.tolist() == model.k.tolist()
    assert est.report.constraints_hw[0] == pytest.approx(0.0, abs=1e-12)

    def greedy(x):
        out = np.zeros((x.shape[0], 3))
        out[:, 2] = 1.0
        return out

    base = _clip_model()
    tight = dataclasses.replace(base, costs=dataclasses.replace(base.costs, k=[0.1]))
    with pytest.raises(ValueError, match="not strictly feasible"):
        estimate_slater(tight, greedy, replications=200)


def test_slater_estimate_stable_across_seeds():
    model = inv1()
    ests = [estimate_slater(model, seed=s, replications=4000) for s in (1, 2, 3)]
    for a in ests:
        for b in ests:
            gap = abs(a.alpha[0] - b.alpha[0])
            assert gap <= a.half_width[0] + b.half_width[0]


def test_tv_discrepancy_examples():
    model = inv1()
    grid = build_grid(model.space, 16)
    ext, _ = perturbed_solve(model, grid, 0.0)
    assert tstep_tv_discrepancy(model, grid, ext, 0, samples=20000).lower == 0.0
    centers = (np.arange(4) + 0.5) / 4

    def H(x, a):
        return centers[np.minimum((x[:, 0] * 4).astype(int), 3)][:, None]

    flat = _clip_model(H=H)
    g4 = build_grid(flat.space, 4)
    pol = extend_policy(StationaryPolicy(np.full((4, 3), 1 / 3)), g4)
    est = tstep_tv_discrepancy(flat, g4, pol, 3, samples=50000, bins=16)
    # shared random numbers make the two chains coincide path by path
    assert est.lower == 0.0


def test_tv_discrepancy_shrinks_with_refinement():
    model = inv1()
    lows = []
    for r in (16, 32, 64, 128):
        grid = build_grid(model.space, r)
        ext, _ = perturbed_solve(model, grid, 0.0)
        est = tstep_tv_discrepancy(model, grid, ext, 3, samples=200000, seed=9)
        assert est.half_l1 <= est.upper
        lows.append(est.lower)
    se = 2 * np.sqrt(64 / 200000)  # crude binned-L1 noise scale
    assert all(b <= a + se for a, b in zip(lows, lows[1:]))
    assert lows[-1] < lows[0]
