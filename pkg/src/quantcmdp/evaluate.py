"""Policy evaluation: exact on finite models, Monte Carlo on the continuous one.

Monte Carlo runs are vectorized over replications and driven by separate
seeded streams for initial states, actions and transitions, so two runs with
the same seed are bitwise identical and runs that differ only in the
dynamics share random numbers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .policy import ExtendedPolicy, StationaryPolicy
from .quantize import FiniteCMDP, Grid, Surrogate, build_finite_model

__all__ = [
    "EvaluationReport",
    "SlaterEstimate",
    "TVEstimate",
    "exact_eval_finite",
    "policy_values_discounted",
    "mc_eval_original",
    "estimate_slater",
    "tstep_tv_discrepancy",
]

N_BATCHES = 20


def _table(policy) -> np.ndarray:
    if isinstance(policy, StationaryPolicy):
        return policy.table
    if isinstance(policy, ExtendedPolicy):
        return policy.base.table
    return np.asarray(policy, dtype=float)


def policy_values_discounted(fm: FiniteCMDP, policy):
    """Value vectors ``v = (1 - beta)(I - beta P)^-1 g`` mapped through gamma.

    Returns ``(J, J_l)`` as a float and an array of length q.
    """
    pi = _table(policy)
    Ppi = fm.policy_matrix(pi)
    rhs = np.column_stack([np.sum(pi * fm.c, axis=1)] + [np.sum(pi * d, axis=1) for d in fm.d])
    v = np.linalg.solve(np.eye(fm.n_states) - fm.beta * Ppi, (1.0 - fm.beta) * rhs)
    vals = fm.gamma @ v
    return float(vals[0]), vals[1:]


def exact_eval_finite(fm: FiniteCMDP, policy, criterion: str = "discounted"):
    """Exact cost and constraint values of a stationary policy on ``fm``.

    Returns
    -------
    value : float
    constraints : ndarray, shape (q,)
    """
    if criterion == "discounted":
        return policy_values_discounted(fm, policy)
    if criterion == "average":
        from .average import stationary_distribution

        pi = _table(policy)
        mu = stationary_distribution(fm, pi)
        cons = np.array([mu @ np.sum(pi * d, axis=1) for d in fm.d])
        return float(mu @ np.sum(pi * fm.c, axis=1)), cons
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass
class EvaluationReport:
    criterion: str
    value: float
    value_hw: float
    constraints: np.ndarray
    constraints_hw: np.ndarray
    bias_bound: float
    constraints_bias: np.ndarray
    horizon: int
    replications: int
    burn_in: int
    seed: int
    confidence: float
    k: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def feasible(self) -> np.ndarray:
        """Per constraint: upper confidence limit (plus bias bound) within k."""
        return self.constraints + self.constraints_hw + self.constraints_bias <= self.k

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, np.ndarray):
                out[key] = val.tolist()
        out["feasible"] = self.feasible.tolist()
        return out


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    init, act, trans, cell = ss.spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(act),
            np.random.default_rng(trans), np.random.default_rng(cell))


class _Dynamics:
    """Cost and transition access for original or surrogate dynamics."""

    def __init__(self, model, surrogate: Surrogate | None = None):
        self.model = model
        self.surrogate = surrogate

    def costs(self, x, a):
        """Cost (N,) and constraint costs (q, N) for action indices ``a``."""
        acts = np.asarray(a)
        if self.surrogate is not None:
            idx = self.surrogate.cell(x)
            return self.surrogate.fm.c[idx, acts], self.surrogate.fm.d[:, idx, acts]
        m = self.model
        pts = m.actions.actions[acts]
        c = np.asarray(m.costs.c(x, pts), dtype=float)
        d = np.stack([np.asarray(dl(x, pts), dtype=float) for dl in m.costs.d]) if m.q else np.zeros((0, x.shape[0]))
        return c, d

    def step(self, x, a, rng_trans, rng_cell):
        if self.surrogate is not None:
            return self.surrogate.sample(x, a, rng_trans, u_cell=rng_cell.random(x.shape))
        rng_cell.random(x.shape)  # keep the streams aligned across dynamics
        return self.model.transition.sampler(x, self.model.actions.actions[np.asarray(a)], rng_trans)


def mc_eval_original(model, policy: ExtendedPolicy, criterion: str = "discounted",
                     horizon: int = 60, replications: int = 2000, burn_in: int = 0,
                     seed: int = 0, confidence: float = 0.99, g=None,
                     surrogate: Surrogate | None = None) -> EvaluationReport:
    """Monte Carlo estimate of the cost and constraint values of ``policy``.

    Parameters
    ----------
    model : ContinuousCMDP
    policy : ExtendedPolicy or callable
        Either an extended policy or any object with ``sample(x, rng)``.
    criterion : {"discounted", "average"}
    horizon : int
        Last time index ``T`` (discounted) or number of averaged steps
        after ``burn_in`` (average).
    replications : int
        Independent trajectories, at least 2.
    g : callable, optional
        ``g(x, action_points) -> (N,)`` replacing the one-stage cost.
    surrogate : Surrogate, optional
        Simulate the cell-averaged surrogate dynamics instead of the model.

    Notes
    -----
    The discounted estimator ``(1 - beta) sum_{t <= T} beta^t g(X_t, A_t)``
    is biased low by at most ``beta^(T+1) sup|g|``, reported separately.
    The average-cost interval uses batch means over the time axis.
    """
    if horizon < 1 or replications < 2:
        raise ValueError("need horizon >= 1 and replications >= 2")
    r_init, r_act, r_trans, r_cell = _streams(seed)
    dyn = _Dynamics(model, surrogate)
    x = model.costs.gamma.sampler(r_init, replications)
    beta = model.beta
    q = model.q
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))

    def stage(x, a):
        c, d = dyn.costs(x, a)
        if g is not None:
            c = np.asarray(g(x, model.actions.actions[np.asarray(a)]), dtype=float)
        return c, d

    if criterion == "discounted":
        acc_c = np.zeros(replications)
        acc_d = np.zeros((q, replications))
        w = 1.0 - beta
        for t in range(horizon + 1):
            a = policy.sample(x, r_act)
            c, d = stage(x, a)
            acc_c += w * c
            acc_d += w * d
            w *= beta
            if t < horizon:
                x = dyn.step(x, a, r_trans, r_cell)
        est_c, est_d = float(acc_c.mean()), acc_d.mean(axis=1)
        hw_c = z * float(acc_c.std(ddof=1)) / np.sqrt(replications)
        hw_d = z * acc_d.std(axis=1, ddof=1) / np.sqrt(replications)
        tail = beta ** (horizon + 1)
        sup_c, sup_d = model.sup_norms()
        if g is not None:
            sup_c = np.nan  # unknown for a user cost; callers bound it themselves
        bias, bias_d = tail * sup_c, tail * sup_d
    elif criterion == "average":
        for _ in range(burn_in):
            a = policy.sample(x, r_act)
            x = dyn.step(x, a, r_trans, r_cell)
        nb = min(N_BATCHES, horizon)
        edges = np.linspace(0, horizon, nb + 1).astype(int)
        bc = np.zeros(nb)
        bd = np.zeros((q, nb))
        b = 0
        for t in range(horizon):
            if t >= edges[b + 1]:
                b += 1
            a = policy.sample(x, r_act)
            c, d = stage(x, a)
            bc[b] += c.sum()
            bd[:, b] += d.sum(axis=1)
            x = dyn.step(x, a, r_trans, r_cell)
        size = np.diff(edges) * replications
        bc /= size
        bd /= size
        est_c, est_d = float(bc.mean()), bd.mean(axis=1)
        if nb >= 2:
            tq = float(stats.t.ppf(0.5 + confidence / 2.0, nb - 1))
            hw_c = tq * float(bc.std(ddof=1)) / np.sqrt(nb)
            hw_d = tq * bd.std(axis=1, ddof=1) / np.sqrt(nb)
        else:
            hw_c, hw_d = np.inf, np.full(q, np.inf)
        bias, bias_d = 0.0, np.zeros(q)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return EvaluationReport(criterion, est_c, float(hw_c), np.asarray(est_d), np.asarray(hw_d),
                            float(bias), np.asarray(bias_d), horizon, replications, burn_in,
                            seed, confidence, model.k.copy())


class _FunctionPolicy:
    """Adapter for ``x -> action distribution`` callables."""

    def __init__(self, fn):
        self.fn = fn

    def sample(self, x, rng):
        probs = np.asarray(self.fn(x), dtype=float)
        cum = np.cumsum(probs, axis=1)
        u = rng.random(cum.shape[0])
        return np.minimum((cum < u[:, None]).sum(axis=1), cum.shape[1] - 1)


@dataclass
class SlaterEstimate:
    alpha: np.ndarray
    half_width: np.ndarray
    report: EvaluationReport


def estimate_slater(model, witness=None, criterion: str = "discounted", horizon: int = 60,
                    replications: int = 4000, burn_in: int = 50, seed: int = 0,
                    confidence: float = 0.99) -> SlaterEstimate:
    """Estimate the Slater slack ``k - W(witness)`` with confidence half-widths.

    Raises
    ------
    ValueError
        If some constraint's upper confidence limit reaches ``k`` (the witness
        is not demonstrably strictly feasible).
    """
    witness = witness if witness is not None else model.regularity.witness_policy
    if witness is None:
        raise ValueError("a witness policy is required to estimate the Slater slack")
    pol = witness if hasattr(witness, "sample") else _FunctionPolicy(witness)
    rep = mc_eval_original(model, pol, criterion, horizon, replications, burn_in, seed, confidence)
    upper = rep.constraints + rep.constraints_hw + rep.constraints_bias
    if (upper >= model.k).any():
        bad = np.flatnonzero(upper >= model.k).tolist()
        raise ValueError(f"witness not strictly feasible for constraints {bad}")
    return SlaterEstimate(model.k - rep.constraints, rep.constraints_hw + rep.constraints_bias, rep)


@dataclass
class TVEstimate:
    t: int
    lower: float
    upper: float | None
    half_l1: float
    bins: int
    samples: int


def tstep_tv_discrepancy(model, grid: Grid, policy: ExtendedPolicy, t: int,
                         samples: int = 100_000, seed: int = 0, bins: int = 64,
                         fm: FiniteCMDP | None = None) -> TVEstimate:
    """Binned estimate of the distance between the t-step laws of the
    original and surrogate dynamics under ``policy`` from the initial law.

    Both chains share every random number.  The returned ``lower`` is the
    L1 distance of the histograms on a fixed product partition with ``bins``
    cells per axis, a lower bound (up to sampling noise) on the total
    variation distance in the L1 convention used by the kernel constant
    ``G_p``.  ``upper`` is ``t G_p 2 alpha_cov (1/n)^(1/dim)`` when ``G_p``
    is declared.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    sur = Surrogate(model, grid, fm if fm is not None else build_finite_model(model, grid))
    orig = _Dynamics(model)
    surr = _Dynamics(model, sur)
    seeds = np.random.SeedSequence(seed).spawn(4)
    x0 = model.costs.gamma.sampler(np.random.default_rng(seeds[0]), samples)
    xo, xs = x0.copy(), x0.copy()
    # identical stream states for the two chains
    ro = [np.random.default_rng(s) for s in seeds[1:]]
    rs = [np.random.default_rng(s) for s in seeds[1:]]
    for _ in range(t):
        ua, ub = ro[0].random(samples), rs[0].random(samples)
        ao = policy.sample(xo, ro[0], u=ua)
        as_ = policy.sample(xs, rs[0], u=ub)
        xo = orig.step(xo, ao, ro[1], ro[2])
        xs = surr.step(xs, as_, rs[1], rs[2])
    edges = [np.linspace(model.space.lower[k], model.space.upper[k], bins + 1)
             for k in range(model.dim)]
    ho, _ = np.histogramdd(xo, bins=edges)
    hs, _ = np.histogramdd(xs, bins=edges)
    l1 = float(np.abs(ho - hs).sum()) / samples
    G_p = model.regularity.G_p
    upper = None
    if G_p is not None:
        upper = t * G_p * 2.0 * grid.alpha_cov * (1.0 / grid.n) ** (1.0 / grid.dim)
    return TVEstimate(t, l1, upper, 0.5 * l1, bins, samples)
