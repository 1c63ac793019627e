import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_average, exact_discounted, surrogate_chain
from quantcmdp.evaluate import mc_eval_original
from quantcmdp.families import inv1, random_finite_cmdp
from quantcmdp.policy import (
    InfeasibleError,
    StationaryPolicy,
    choose_eps,
    escalate,
    extend_policy,
    load_extended_policy,
    perturbed_solve,
    solve_finite,
)
from quantcmdp.quantize import build_finite_model, build_grid
from test_model import UNIT


def test_extension_examples():
    grid = build_grid(UNIT, 4)
    det = StationaryPolicy.deterministic([2, 0, 1, 1], 3)
    ext = extend_policy(det, grid)
    x = np.linspace(0, 1, 101)[:, None]
    probs = ext(x)
    assert set(np.unique(probs)) <= {0.0, 1.0}
    assert np.array_equal(ext([[0.26]]), ext([[0.49]]))
    assert np.array_equal(ext(grid.points), det.table)
    with pytest.raises(ValueError):
        ext([[1.2]])


def test_extended_policy_serialization_roundtrip():
    model = inv1()
    grid = build_grid(model.space, 8)
    ext, _ = perturbed_solve(model, grid, 0.01)
    again = load_extended_policy(ext.dumps())
    assert again.grid.digest() == grid.digest()
    assert np.array_equal(again.base.table, ext.base.table)
    data = json.loads(ext.dumps())
    data["resolution"] = [16]
    with pytest.raises(ValueError, match="grid digest mismatch"):
        load_extended_policy(data)


def test_zero_eps_reduces_to_plain_solve():
    model = inv1()
    grid = build_grid(model.space, 32)
    fm = build_finite_model(model, grid)
    for crit in ("discounted", "average"):
        ext, rep = perturbed_solve(model, grid, 0.0, crit, fm=fm)
        plain = solve_finite(fm, crit)
        assert rep.value == plain.value
        assert np.array_equal(ext.base.table, plain.policy.table)


def test_over_tightening_paths():
    model = inv1()
    grid = build_grid(model.space, 16)
    with pytest.raises(ValueError, match="Slater cap"):
        perturbed_solve(model, grid, 0.12)
    with pytest.raises(ValueError, match="Slater cap"):
        perturbed_solve(model, grid, 0.06, "average")
    # past the cap with the gate off, the finite problem itself is infeasible
    with pytest.raises(InfeasibleError, match="grid too coarse for this eps"):
        perturbed_solve(model, grid, 0.149, check_cap=False)


def test_tightened_policy_is_feasible_on_original_model():
    model = inv1()
    k1 = float(model.k[0])
    ext, rep = perturbed_solve(model, build_grid(model.space, 64), 0.05 * k1)
    assert rep.finite_constraints[0] <= k1 - 0.05 * k1 + 1e-9
    ev = mc_eval_original(model, ext, horizon=60, replications=4000, seed=7, confidence=0.99)
    assert ev.constraints[0] <= k1 + ev.constraints_hw[0]
    assert ev.feasible.all()


def test_choose_eps_examples():
    eps, clipped = choose_eps(0.6, 1.0, [0.5])
    assert eps == pytest.approx(0.05) and not clipped
    with pytest.warns(UserWarning, match="clipped"):
        eps, clipped = choose_eps(100.0, 1.0, [0.5])
    assert clipped and eps < 0.5
    eps_avg, _ = choose_eps(0.6, 1.0, [0.5], "average")
    assert eps_avg == pytest.approx(0.05)
    kappas = [1.0, 0.5, 0.1, 0.01, 1e-6]
    vals = [choose_eps(k, 1.0, [0.5])[0] for k in kappas]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        choose_eps(0.0, 1.0, [0.5])


@pytest.mark.parametrize("crit", ["discounted", "average"])
def test_extended_optimum_reproduces_finite_value_on_surrogate(crit):
    model = inv1()
    grid = build_grid(model.space, 16)
    ext, rep = perturbed_solve(model, grid, 0.0, crit)
    P, c, d, pi, fm = surrogate_chain(model, grid, ext, np.random.default_rng(0))
    if crit == "discounted":
        v, j = exact_discounted(P, c, d, fm.gamma, fm.beta, pi)
    else:
        v, j = exact_average(P, c, d, pi)
    assert v == pytest.approx(rep.value, abs=1e-8)
    assert np.allclose(j, rep.finite_constraints, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.integers(2, 4),
       st.floats(0.0, 0.02), st.sampled_from(["discounted", "average"]))
def test_tightening_never_lowers_the_value(seed, n, A, eps, crit):
    fm = random_finite_cmdp(np.random.default_rng(seed), n, A, 1)
    base = solve_finite(fm, crit).value
    try:
        tight = solve_finite(fm.with_k(fm.k - eps), crit).value
    except InfeasibleError:
        return
    assert tight >= base - 1e-9


def test_dual_route_matches_lp_on_inv1():
    model = inv1()
    fm = build_finite_model(model, build_grid(model.space, 64))
    for crit in ("discounted", "average"):
        lp = solve_finite(fm, crit, "lp")
        du = solve_finite(fm, crit, "dual", K_bound=2.0 / 0.12)
        assert du.value == pytest.approx(lp.value, abs=1e-8)
    with pytest.raises(ValueError, match="needs the multiplier bound"):
        solve_finite(fm, "discounted", "dual")
    with pytest.raises(ValueError, match="unknown method"):
        solve_finite(fm, "discounted", "simplex")


def test_escalation_reports_margin_and_history():
    model = inv1()
    res = escalate(model, 0.01, "average", start=8, horizon=300, replications=1000,
                   burn_in=50, seed=3)
    margin = model.k - res.evaluation.constraints - res.evaluation.constraints_hw
    assert (margin > 0).all()
    assert res.history[-1][0] == res.resolution
    assert res.policy.grid.n == res.resolution
    with pytest.raises(InfeasibleError, match="escalation exhausted"):
        escalate(model, 0.01, start=8, max_resolution=4)
