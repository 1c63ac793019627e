import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from quantcmdp.families import INV1_PARAMS, additive_gaussian, inv1
from quantcmdp.model import (
    ActionGrid,
    CostSpec,
    InitialDistribution,
    MinorizationData,
    ModelError,
    StateSpace,
    TruncatedGaussianNoise,
    estimate_kernel_moduli,
    load_model,
    make_additive_noise,
    model_from_spec,
    save_model,
    validate_model,
)

UNIT = StateSpace(np.zeros(1), np.ones(1))


def _uniform_initial(space):
    def dens(y):
        return np.full(np.asarray(y).shape[0], 1.0 / np.prod(space.widths))

    def sampler(rng, size):
        return space.uniform(rng, size)

    def mass(k, edges):
        return np.diff(edges) / space.widths[k]

    return InitialDistribution(dens, sampler, mass)


def _costs(space, k=0.5, beta=0.9):
    return CostSpec(
        c=lambda x, a: (x[:, 0] - 0.5) ** 2 + 0.1 * a[:, 0],
        d=(lambda x, a: a[:, 0],),
        k=[k], beta=beta, gamma=_uniform_initial(space),
    )


def _clip_model(sigma=0.2, H=None):
    actions = ActionGrid(np.array([[0.0], [0.1], [0.2]]))
    H = H or (lambda x, a: np.clip(x + a, 0.0, 1.0))
    return make_additive_noise(UNIT, actions, H, TruncatedGaussianNoise(sigma, UNIT),
                               _costs(UNIT))


def test_builtin_family_passes_every_check():
    report = validate_model(inv1(), seed=3)
    assert report.ok
    assert {c.name for c in report.checks} >= {
        "density_normalization", "nonnegative_costs", "minorization", "lipschitz", "slater"}
    assert all(c.status == "pass" for c in report.checks)


def test_discount_one_is_a_hard_error():
    with pytest.raises(ModelError, match="discount out of range"):
        inv1(beta=1.0)


def test_violated_minorization_is_reported():
    model = inv1()
    mino = model.regularity.minorization
    bad = MinorizationData(mino.axis_edges, mino.axis_weights,
                           phi=lambda x, a: np.full(x.shape[0], 0.9), alpha_min=0.05)
    model = dataclasses.replace(model, regularity=dataclasses.replace(
        model.regularity, minorization=bad))
    report = validate_model(model)
    assert report["minorization"].status == "fail"
    assert not report.ok


def test_clipped_drift_density_integrates_to_one_by_quadrature():
    model = _clip_model()
    for x in (0.0, 0.3, 0.95, 1.0):
        for a in (0.0, 0.2):
            f = lambda y: model.transition.density(np.array([[y]]), np.array([[x]]), [a])[0, 0]
            total, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-12)
            assert total == pytest.approx(1.0, abs=1e-6)
    y = np.linspace(0, 1, 201)[:, None]
    assert (model.transition.density(y, np.array([[1.0]]), [0.2]) > 0).all()


def test_zero_variance_noise_rejected():
    with pytest.raises(ModelError, match="no density"):
        TruncatedGaussianNoise(0.0, UNIT)


def test_constant_drift_gives_state_independent_kernel():
    model = _clip_model(H=lambda x, a: np.full((x.shape[0], 1), 0.4))
    y = np.linspace(0, 1, 50)[:, None]
    f1 = model.transition.density(y, np.array([[0.1]]), [0.0])
    f2 = model.transition.density(y, np.array([[0.9]]), [0.2])
    assert np.array_equal(f1, f2)
    est = estimate_kernel_moduli(model)
    assert est["K_p"] == pytest.approx(0.0, abs=1e-9)
    assert est["G_p"] == pytest.approx(0.0, abs=1e-9)


def test_sampler_agrees_with_cell_masses():
    noise = TruncatedGaussianNoise(0.3, UNIT)
    m = np.full((200000, 1), 0.8)
    y = noise.sample(m, np.random.default_rng(1))
    assert ((y >= 0) & (y <= 1)).all()
    edges = np.linspace(0, 1, 11)
    p = noise.axis_cell_mass(m[:1], 0, edges)[0]
    freq = np.histogram(y[:, 0], edges)[0] / y.shape[0]
    se = np.sqrt(p * (1 - p) / y.shape[0])
    assert (np.abs(freq - p) <= 4 * se).all()


def test_declared_total_variation_modulus_is_sound():
    model = inv1()
    G_p = model.regularity.G_p
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, xp = rng.random(2)
        a = rng.integers(model.n_actions)
        act = [model.actions[a]]

        def gap(y):
            yy = np.array([[y]])
            return abs(model.transition.density(yy, np.array([[x]]), act)[0, 0]
                       - model.transition.density(yy, np.array([[xp]]), act)[0, 0])

        tv = integrate.quad(gap, 0, 1, limit=200)[0]
        assert tv <= G_p * abs(x - xp) + 1e-8


def test_minorization_holds_pointwise_on_inv1():
    model = inv1()
    mino = model.regularity.minorization
    y = np.linspace(0, 1, 2001)[:, None]
    lam = mino.density(y)
    for x in np.linspace(0, 1, 41):
        for a in range(model.n_actions):
            f = model.transition.density(y, np.array([[x]]), [model.actions[a]])[0]
            phi = mino.phi(np.array([[x]]), model._actions_for(a, 1))
            assert (f >= phi * lam - 1e-9).all()
            assert phi.min() >= 1 - mino.alpha_min - 1e-12


def test_spec_roundtrip(tmp_path):
    model = inv1(k=[0.2])
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    assert again.digest() == model.digest()
    assert again.k.tolist() == [0.2]


def test_unknown_family_rejected():
    with pytest.raises(ModelError, match="unknown model family"):
        model_from_spec({"family": "nope"})


def test_nonpositive_level_rejected():
    with pytest.raises(ModelError, match="must be positive"):
        inv1(k=[0.0])


def test_family_parameters_reach_the_model():
    params = dict(INV1_PARAMS, sigma=0.5, name="wide")
    model = additive_gaussian(**params)
    assert model.name == "wide"
    assert model.noise.sigma.tolist() == [0.5]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(-0.5, 1.5))
def test_noise_density_normalized(sigma, m):
    noise = TruncatedGaussianNoise(sigma, UNIT)
    mm = np.clip(np.array([[m]]), 0, 1)
    total = integrate.quad(lambda y: noise.density(np.array([[y]]), mm)[0, 0], 0, 1,
                           epsabs=1e-12, points=[float(mm[0, 0])])[0]
    assert total == pytest.approx(1.0, abs=1e-8)
    assert noise.axis_cell_mass(mm, 0, np.array([0.0, 1.0]))[0] == pytest.approx(1.0, abs=1e-12)
