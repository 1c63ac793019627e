"""Builtin model families.

``additive_gaussian``
    Affine drift clipped to the box plus truncated Gaussian noise, a
    quadratic tracking cost and affine constraint costs.  Regularity
    constants and minorization data are derived from the parameters.
``inv1``
    One-dimensional inventory-style instance of ``additive_gaussian`` with
    one constraint, used throughout the tests and demos.

Finite instances (``toy2`` and random generators) are provided as
:class:`~quantcmdp.quantize.FiniteCMDP` objects.
"""

from __future__ import annotations

import json

import numpy as np
from scipy import special
from scipy.integrate import trapezoid

from .model import (
    ActionGrid,
    ContinuousCMDP,
    CostSpec,
    InitialDistribution,
    MinorizationData,
    ModelError,
    RegularityData,
    StateSpace,
    TruncatedGaussianNoise,
    make_additive_noise,
    register_family,
)
from .quantize import FiniteCMDP

__all__ = [
    "additive_gaussian",
    "inv1",
    "INV1_PARAMS",
    "toy2",
    "random_finite_cmdp",
    "random_minorized_chain",
]


def _corners(lower, upper):
    dim = lower.size
    grid = np.stack(np.meshgrid(*[[lower[k], upper[k]] for k in range(dim)], indexing="ij"), -1)
    return grid.reshape(-1, dim)


def _axis_deriv_l1(sigma: float, lo: float, hi: float, n_m: int = 401, n_y: int = 2001) -> float:
    """sup over drift m in [lo, hi] of the L1 norm of d/dm of the truncated
    Gaussian density on [lo, hi]."""
    y = np.linspace(lo, hi, n_y)
    m = np.linspace(lo, hi, n_m)
    h = 1e-6 * (hi - lo)

    def dens(mm):
        z = special.ndtr((hi - mm) / sigma) - special.ndtr((lo - mm) / sigma)
        u = (y[None, :] - mm[:, None]) / sigma
        return np.exp(-0.5 * u**2) / (np.sqrt(2 * np.pi) * sigma * z[:, None])

    deriv = (dens(m + h) - dens(m - h)) / (2 * h)
    l1 = trapezoid(np.abs(deriv), y, axis=1)
    return float(l1.max())


def _axis_min_density(sigma: float, lo: float, hi: float, bins: int, n_m: int = 257,
                      sub: int = 33):
    """Per-bin infimum over drift points and bin locations of the axis density."""
    edges = np.linspace(lo, hi, bins + 1)
    m = np.linspace(lo, hi, n_m)
    z = special.ndtr((hi - m) / sigma) - special.ndtr((lo - m) / sigma)
    mins = np.empty(bins)
    for b in range(bins):
        y = np.linspace(edges[b], edges[b + 1], sub)
        u = (y[None, :] - m[:, None]) / sigma
        f = np.exp(-0.5 * u**2) / (np.sqrt(2 * np.pi) * sigma * z[:, None])
        mins[b] = f.min()
    # the density is monotone in y on each side of m and unimodal in m, so the
    # minimum over a bin is attained at a bin edge with m at a box end; the
    # dense evaluation above includes both
    return edges, mins


@register_family("additive_gaussian")
def additive_gaussian(
    lower,
    upper,
    actions,
    drift,
    sigma,
    cost,
    constraints,
    k,
    beta,
    initial=None,
    alpha_slater=None,
    witness_action=None,
    minorization_bins: int = 64,
    minorization_safety: float = 1e-3,
    lipschitz_safety: float = 1.02,
    overrides=None,
    name: str = "additive_gaussian",
) -> ContinuousCMDP:
    """Additive truncated-Gaussian model with affine drift.

    Parameters
    ----------
    lower, upper : list of float
        State box.
    actions : list
        Action points (scalars or lists).
    drift : dict
        ``{"M": dim x dim, "N": dim x action_dim, "b": dim}``; the drift is
        ``clip(M x + N a + b)``.
    sigma : float or list of float
        Noise standard deviation per axis.
    cost : dict
        ``{"w_x": float, "x_star": list, "w_a": list}`` for
        ``c(x, a) = w_x |x - x_star|^2 + <w_a, a>``.
    constraints : list of dict
        Each ``{"u": list, "v": list, "w": float}`` for
        ``d(x, a) = <u, a> + <v, x> + w``.
    k : list of float
        Constraint levels.
    beta : float
        Discount factor.
    initial : dict, optional
        ``{"kind": "uniform"}`` (default) or
        ``{"kind": "gaussian", "mean": list, "sigma": list}`` (truncated).
    alpha_slater : list of float, optional
        Declared Slater slack of the witness policy.
    witness_action : int, optional
        Index of the action used by the (constant) witness policy.
    overrides : dict, optional
        Declared constants replacing the derived ones (``K_c``, ``K_l``,
        ``K_p``, ``G_p``).
    """
    space = StateSpace(lower, upper)
    grid = ActionGrid(actions)
    dim, adim = space.dim, grid.dim
    M = np.asarray(drift.get("M", np.eye(dim)), dtype=float).reshape(dim, dim)
    N = np.asarray(drift.get("N", np.zeros((dim, adim))), dtype=float).reshape(dim, adim)
    b = np.asarray(drift.get("b", np.zeros(dim)), dtype=float).reshape(dim)

    def H(x, a):
        return x @ M.T + a @ N.T + b

    noise = TruncatedGaussianNoise(sigma, space)

    w_x = float(cost.get("w_x", 1.0))
    x_star = np.asarray(cost.get("x_star", np.zeros(dim)), dtype=float).reshape(dim)
    w_a = np.asarray(cost.get("w_a", np.zeros(adim)), dtype=float).reshape(adim)

    def c(x, a):
        return w_x * np.sum((x - x_star) ** 2, axis=1) + a @ w_a

    cons = [(np.asarray(cn.get("u", np.zeros(adim)), dtype=float).reshape(adim),
             np.asarray(cn.get("v", np.zeros(dim)), dtype=float).reshape(dim),
             float(cn.get("w", 0.0))) for cn in constraints]

    def make_d(u, v, w):
        return lambda x, a: a @ u + x @ v + w

    ds = [make_d(*cn) for cn in cons]

    corners = _corners(space.lower, space.upper)
    far = float(np.max(np.sum((corners - x_star) ** 2, axis=1)))
    act_c = grid.actions @ w_a
    sup_c = w_x * far + float(act_c.max())
    min_c = float(act_c.min())
    sup_d, min_d = [], []
    for u, v, w in cons:
        vals = (grid.actions @ u)[:, None] + (corners @ v)[None, :] + w
        sup_d.append(float(np.abs(vals).max()))
        min_d.append(float(vals.min()))
    if min_c < -1e-12 or (min_d and min(min_d) < -1e-12):
        raise ModelError("costs must be nonnegative on the box")

    initial = initial or {"kind": "uniform"}
    gamma = _initial(space, initial)
    costs = CostSpec(c, tuple(ds), np.asarray(k, dtype=float), float(beta), gamma,
                     sup_c=sup_c, sup_d=tuple(sup_d))

    # regularity
    K_H = float(np.linalg.norm(M, 2))
    dist_star = np.sqrt(far)
    K_c = 2.0 * w_x * dist_star
    K_l = tuple(float(np.linalg.norm(v)) for _, v, _ in cons)
    # W1: quantile coupling per axis moves each coordinate by at most the
    # drift displacement in mean; bounded through the l1 norm of the shift
    K_p = K_H * (np.sqrt(dim) if dim > 1 else 1.0)
    axis_l1 = max(_axis_deriv_l1(noise.sigma[kk], space.lower[kk], space.upper[kk])
                  for kk in range(dim))
    G_p = lipschitz_safety * K_H * np.sqrt(dim) * axis_l1

    edges, weights, mass = [], [], 1.0
    for kk in range(dim):
        e, mins = _axis_min_density(noise.sigma[kk], space.lower[kk], space.upper[kk],
                                    minorization_bins)
        mins = (1.0 - minorization_safety) * mins
        bin_mass = mins * np.diff(e)
        total = float(bin_mass.sum())
        mass *= total
        edges.append(e)
        weights.append(bin_mass / total)
    phi_const = mass

    def phi(x, a):
        return np.full(np.asarray(x).reshape(-1, dim).shape[0], phi_const)

    mino = MinorizationData(tuple(edges), tuple(weights), phi, 1.0 - phi_const)

    declared = dict(K_c=K_c, K_l=K_l, K_p=K_p, G_p=G_p)
    for key, val in (overrides or {}).items():
        declared[key] = tuple(val) if key == "K_l" else float(val)

    witness = None
    if witness_action is not None:
        wa = int(witness_action)

        def witness(x):
            x = np.asarray(x).reshape(-1, dim)
            out = np.zeros((x.shape[0], len(grid)))
            out[:, wa] = 1.0
            return out

    reg = RegularityData(
        K_c=declared["K_c"], K_l=declared["K_l"], K_p=declared["K_p"], G_p=declared["G_p"],
        minorization=mino,
        alpha_slater=None if alpha_slater is None else tuple(float(v) for v in alpha_slater),
        witness_policy=witness,
    )
    return make_additive_noise(space, grid, H, noise, costs, reg, name)


def _initial(space: StateSpace, spec: dict) -> InitialDistribution:
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        vol = float(np.prod(space.widths))

        def density(y):
            return np.full(np.asarray(y).reshape(-1, space.dim).shape[0], 1.0 / vol)

        def sampler(rng, size):
            return space.uniform(rng, size)

        def axis_mass(k, edges):
            e = np.clip(edges, space.lower[k], space.upper[k])
            return np.diff(e) / space.widths[k]

        return InitialDistribution(density, sampler, axis_mass)
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(spec["mean"], dtype=float), (space.dim,))
        noise = TruncatedGaussianNoise(spec["sigma"], space)
        m = mean[None, :]

        def density(y):
            return noise.density(np.asarray(y).reshape(-1, space.dim), m)[0]

        def sampler(rng, size):
            return noise.sample(np.repeat(m, size, axis=0), rng)

        def axis_mass(k, edges):
            return noise.axis_cell_mass(m, k, np.asarray(edges))[0]

        return InitialDistribution(density, sampler, axis_mass)
    raise ModelError(f"unknown initial distribution kind {kind!r}")


INV1_PARAMS = dict(
    lower=[0.0],
    upper=[1.0],
    actions=[0.0, 0.1, 0.2, 0.3],
    drift={"M": [[1.0]], "N": [[1.0]], "b": [-0.15]},
    sigma=0.3,
    cost={"w_x": 1.0, "x_star": [1.0], "w_a": [0.0]},
    constraints=[{"u": [1.0], "v": [0.1], "w": 0.0}],
    k=[0.15],
    beta=0.8,
    initial={"kind": "uniform"},
    # do-nothing witness: its discounted and average constraint costs are
    # about 0.029 and 0.028, so 0.12 is a conservative slack for both
    alpha_slater=[0.12],
    witness_action=0,
    name="inv1",
)


@register_family("inv1")
def inv1(**changes) -> ContinuousCMDP:
    """Inventory-like one-dimensional model on [0, 1].

    The state drifts down by 0.15 per step; ordering ``a`` in
    {0, 0.1, 0.2, 0.3} pushes it up.  Cost ``(1 - x)^2`` rewards a full
    stock while the constraint ``a + 0.1 x`` (ordering plus holding) must
    stay below 0.15 on average.
    """
    params = dict(INV1_PARAMS)
    params.update(changes)
    model = additive_gaussian(**params)
    spec = json.loads(json.dumps({"family": "inv1", "params": changes}, sort_keys=True))
    object.__setattr__(model, "spec", spec)
    return model


def toy2(beta: float = 0.5, k: float = 0.4) -> FiniteCMDP:
    """Two states, two actions, one constraint.

    Action 1 is cheap in cost but incurs a unit constraint cost.
    """
    P = np.array([
        [[0.9, 0.1], [0.7, 0.3]],
        [[0.2, 0.8], [0.1, 0.9]],
    ])
    c = np.array([[1.0, 0.2], [0.8, 0.0]])
    d = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    return FiniteCMDP(P, c, d, np.array([0.5, 0.5]), np.array([k]), beta,
                      meta={"name": "toy2"})


def _random_kernel(rng, n_actions, n_states, floor=0.0):
    P = rng.random((n_actions, n_states, n_states)) ** 2 + floor
    return P / P.sum(axis=2, keepdims=True)


def random_finite_cmdp(rng: np.random.Generator, n_states: int, n_actions: int, q: int,
                       beta: float | None = None, margin: float = 0.05,
                       tight: float = 0.5) -> FiniteCMDP:
    """Random finite model that is feasible (with Slater slack) by construction.

    The constraint levels are placed between the constraint values of a
    random witness policy (plus ``margin``) and the unconstrained optimum's,
    so that constraints tend to be active.
    """
    from .evaluate import exact_eval_finite, policy_values_discounted

    beta = float(rng.uniform(0.3, 0.95)) if beta is None else beta
    P = _random_kernel(rng, n_actions, n_states)
    c = rng.random((n_states, n_actions))
    d = rng.random((q, n_states, n_actions))
    gamma = rng.dirichlet(np.ones(n_states))
    base = FiniteCMDP(P, c, d, gamma, np.ones(q), beta)
    witness = rng.dirichlet(np.ones(n_actions), size=n_states)
    _, jw = exact_eval_finite(base, witness, "discounted")
    # greedy unconstrained policy for a target level beyond the witness
    _, jg = policy_values_discounted(base, _greedy_policy(base))
    levels = jw + margin + tight * np.clip(jg - jw - margin, 0.0, None) * rng.random(q)
    return base.with_k(levels)


def _greedy_policy(fm: FiniteCMDP) -> np.ndarray:
    u = np.zeros(fm.n_states)
    for _ in range(2000):
        Q = fm.c + fm.beta * np.einsum("aij,j->ia", fm.P, u)
        un = Q.min(axis=1)
        if np.abs(un - u).max() < 1e-12:
            break
        u = un
    pi = np.zeros_like(fm.c)
    pi[np.arange(fm.n_states), Q.argmin(axis=1)] = 1.0
    return pi


def random_minorized_chain(rng: np.random.Generator, n_states: int, alpha_min: float):
    """Stochastic matrix ``(1 - alpha) 1 lam^T + alpha Q`` with its lambda.

    Returns ``(P, lam)``; ``P`` dominates ``(1 - alpha_min) lam`` row-wise.
    """
    lam = rng.dirichlet(np.ones(n_states))
    Q = rng.random((n_states, n_states)) ** 3
    Q /= Q.sum(axis=1, keepdims=True)
    P = (1.0 - alpha_min) * lam[None, :] + alpha_min * Q
    return P, lam
