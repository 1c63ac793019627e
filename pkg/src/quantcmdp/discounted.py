"""Discounted-cost constrained finite models.

The problem is the linear program over normalized occupation measures::

    minimize    <zeta, c>
    subject to  zeta_hat(j) - beta * sum_{i,a} P[a, i, j] zeta(i, a) = (1 - beta) gamma(j)
                <zeta, d_l> + alpha_l = k_l,      zeta >= 0, alpha >= 0

Its dual variables are a value vector ``u`` (balance rows) and nonpositive
multipliers ``delta`` (constraint rows).  For a fixed ``delta`` the inner
problem is an unconstrained MDP with cost ``c - sum_l delta_l d_l``, which
gives the Lagrangian dual function

    G(delta) = (1 - beta) <gamma, u_delta> + <k, delta>.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .lpcore import LinearProgram, LPSolution, solve_lp
from .policy import InfeasibleError, StationaryPolicy
from .quantize import FiniteCMDP

__all__ = [
    "OccupationMeasure",
    "DualCertificate",
    "DiscountedSolution",
    "build_occupation_lp",
    "solve_discounted",
    "lagrangian_value_iteration",
    "greedy_policy",
    "dual_function",
    "dual_function_sweep",
    "maximize_dual",
    "occupation_of_policy",
    "solve_discounted_dual",
    "straddle_level",
]


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    zeta: np.ndarray

    @property
    def marginal(self) -> np.ndarray:
        return self.zeta.sum(axis=1)

    @property
    def mass(self) -> float:
        return float(self.zeta.sum())

    def balance_residual(self, fm: FiniteCMDP) -> float:
        inflow = np.einsum("ia,aij->j", self.zeta, fm.P)
        res = self.marginal - (1.0 - fm.beta) * fm.gamma - fm.beta * inflow
        return float(np.abs(res).max())


@dataclass(frozen=True, eq=False)
class DualCertificate:
    delta: np.ndarray
    u: np.ndarray
    objective: float

    def violation(self, fm: FiniteCMDP) -> float:
        """Largest excess of ``u`` over ``c_delta + beta P u`` (zero if feasible)."""
        cd = fm.c - np.einsum("l,lia->ia", self.delta, fm.d)
        rhs = cd + fm.beta * fm.expect(self.u)[0]
        return float(max(0.0, (self.u[:, None] - rhs).max()))


@dataclass(eq=False)
class DiscountedSolution:
    value: float
    occupation: OccupationMeasure
    policy: StationaryPolicy
    dual: DualCertificate
    constraint_values: np.ndarray
    lp: LPSolution | None = None
    residuals: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.value, self.occupation, self.policy, self.dual))


def build_occupation_lp(fm: FiniteCMDP) -> LinearProgram:
    """Equality-form LP with variables ``zeta(i, a)`` (C order) then slacks."""
    n, A, q = fm.n_states, fm.n_actions, fm.q
    nz = n * A
    M = np.zeros((n + q, nz + q))
    # balance rows: column (i, a) gets e_i - beta P[a, i, :]
    bal = -fm.beta * np.transpose(fm.P, (2, 1, 0)).reshape(n, nz)
    cols = np.arange(nz)
    bal[cols // A, cols] += 1.0
    M[:n, :nz] = bal
    for l in range(q):
        M[n + l, :nz] = fm.d[l].ravel()
        M[n + l, nz + l] = 1.0
    rhs = np.concatenate([(1.0 - fm.beta) * fm.gamma, fm.k])
    obj = np.concatenate([fm.c.ravel(), np.zeros(q)])
    labels = tuple(f"z_{i}_{a}" for i in range(n) for a in range(A)) + tuple(
        f"s_{l}" for l in range(q))
    rows = tuple(f"bal_{j}" for j in range(n)) + tuple(f"con_{l}" for l in range(q))
    return LinearProgram(obj, M, rhs, labels, rows)


def solve_discounted(fm: FiniteCMDP, **lp_options) -> DiscountedSolution:
    """Optimal value, occupation measure, policy and dual certificate.

    The policy is read off the occupation measure by disintegration (uniform
    on states of zero marginal).

    Raises
    ------
    InfeasibleError
        "constraints infeasible at this grid" when the LP has no solution.
    """
    lp = build_occupation_lp(fm)
    sol = solve_lp(lp, **lp_options)
    if sol.status == "infeasible":
        raise InfeasibleError("constraints infeasible at this grid")
    if not sol.optimal:
        raise RuntimeError(f"occupation LP ended with status {sol.status}")
    n, A, q = fm.n_states, fm.n_actions, fm.q
    zeta = sol.x[: n * A].reshape(n, A)
    occ = OccupationMeasure(zeta)
    policy = StationaryPolicy.from_occupation(zeta)
    u = sol.y[:n]
    delta = np.minimum(sol.y[n:], 0.0)
    cert = DualCertificate(delta, u, float((1.0 - fm.beta) * fm.gamma @ u + fm.k @ delta))
    cons = np.einsum("lia,ia->l", fm.d, zeta)
    out = DiscountedSolution(sol.objective, occ, policy, cert, cons, sol)
    out.residuals = {
        **sol.residuals,
        "mass": abs(occ.mass - 1.0),
        "balance": occ.balance_residual(fm),
        "dual_violation": cert.violation(fm),
        "relative_gap": abs(sol.objective - cert.objective) / max(1.0, abs(sol.objective)),
    }
    return out


def _lagrangian_costs(fm: FiniteCMDP, deltas: np.ndarray) -> np.ndarray:
    """Costs ``c - sum_l delta_l d_l`` for a batch of multipliers: (B, n, A)."""
    return fm.c[None] - np.einsum("bl,lia->bia", deltas, fm.d)


def lagrangian_value_iteration(fm: FiniteCMDP, delta, tol: float = 1e-10,
                               u0=None, max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of the Lagrangian Bellman operator.

    Iterates ``u <- min_a [c_delta + beta P u]`` until successive iterates
    differ by at most ``tol (1 - beta) / beta`` in sup norm, which bounds the
    distance to the fixed point by ``tol``.  ``delta`` may be a single
    multiplier vector (returns shape (n,)) or a batch (B, q) (returns (B, n)).
    """
    d = np.asarray(delta, dtype=float)
    single = d.ndim <= 1
    d = d.reshape(-1, fm.q) if fm.q else np.zeros((1 if single else d.shape[0], 0))
    if (d > 0).any():
        raise ValueError("multipliers must be nonpositive")
    cd = _lagrangian_costs(fm, d)
    u = np.zeros((d.shape[0], fm.n_states)) if u0 is None else np.array(
        np.broadcast_to(u0, (d.shape[0], fm.n_states)), dtype=float)
    stop = tol * (1.0 - fm.beta) / fm.beta
    for _ in range(max_iter):
        Pu = fm.expect(u)
        un = (cd + fm.beta * Pu).min(axis=2)
        gap = np.abs(un - u).max()
        u = un
        if gap <= stop:
            break
    else:
        raise RuntimeError("value iteration did not converge")
    return u[0] if single else u


def greedy_policy(fm: FiniteCMDP, u: np.ndarray, delta=None) -> np.ndarray:
    """Deterministic minimizer of the Lagrangian Q-function (action indices)."""
    delta = np.zeros(fm.q) if delta is None else np.asarray(delta, dtype=float)
    cd = fm.c - np.einsum("l,lia->ia", delta, fm.d)
    return (cd + fm.beta * fm.expect(u)[0]).argmin(axis=1)


def dual_function(fm: FiniteCMDP, delta, tol: float = 1e-10, u0=None):
    """``G(delta)`` and the value vector ``u_delta``."""
    delta = np.asarray(delta, dtype=float).reshape(fm.q)
    u = lagrangian_value_iteration(fm, delta, tol, u0)
    return float((1.0 - fm.beta) * fm.gamma @ u + fm.k @ delta), u


def _simplex_points(q: int, grid_pts: int) -> np.ndarray:
    """Integer points of {m in N^q : sum m <= grid_pts}."""
    if q == 0:
        return np.zeros((1, 0), dtype=int)
    if q == 1:
        return np.arange(grid_pts + 1)[:, None]
    pts = [p for p in itertools.product(range(grid_pts + 1), repeat=q) if sum(p) <= grid_pts]
    return np.asarray(pts, dtype=int)


def dual_function_sweep(fm: FiniteCMDP, K_bound: float, grid_pts: int, tol: float = 1e-11,
                        batch: int = 2048):
    """Maximize ``G`` over a lattice of ``{delta <= 0, |delta|_1 <= K_bound}``.

    The lattice has spacing ``K_bound / grid_pts`` per coordinate.

    Returns
    -------
    delta_star : ndarray
    G_max : float
    """
    pts = -K_bound * _simplex_points(fm.q, grid_pts) / grid_pts
    best_val, best = -np.inf, None
    u0 = None
    for start in range(0, pts.shape[0], batch):
        chunk = pts[start:start + batch]
        u = lagrangian_value_iteration(fm, chunk, tol, u0)
        G = (1.0 - fm.beta) * u @ fm.gamma + chunk @ fm.k
        i = int(np.argmax(G))
        if G[i] > best_val:
            best_val, best = float(G[i]), chunk[i].copy()
        u0 = u[-1]
    return best, best_val


@dataclass
class DualSolveResult:
    value: float
    delta: np.ndarray
    u: np.ndarray
    evaluations: int


def maximize_dual(fm: FiniteCMDP, K_bound: float, tol: float = 1e-9,
                  vi_tol: float = 1e-11, max_rounds: int = 200) -> DualSolveResult:
    """Maximize the concave dual function without forming the LP.

    One constraint: golden-section search on ``[-K_bound, 0]``.  Several
    constraints: Kelley cutting planes over the l1 ball, with subgradients
    ``k - J_d(greedy policy)`` from exact policy evaluation.  ``value`` is
    the best dual value found, a lower bound on the LP optimum that matches
    it up to ``tol`` times the dual Lipschitz constant.
    """
    q = fm.q
    if q == 0:
        G, u = dual_function(fm, np.zeros(0), vi_tol)
        return DualSolveResult(G, np.zeros(0), u, 1)
    if q == 1:
        return _golden(fm, K_bound, tol, vi_tol)
    return _kelley(fm, K_bound, tol, vi_tol, max_rounds)


def _golden(fm, K_bound, tol, vi_tol):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = -K_bound, 0.0
    cache = {}

    def G(x, u0=None):
        if x not in cache:
            cache[x] = dual_function(fm, [x], vi_tol, u0)
        return cache[x]

    a = hi - invphi * (hi - lo)
    b = lo + invphi * (hi - lo)
    ga, ua = G(a)
    gb, ub = G(b, ua)
    while hi - lo > tol:
        if ga >= gb:
            hi, b, gb, ub = b, a, ga, ua
            a = hi - invphi * (hi - lo)
            ga, ua = G(a, ub)
        else:
            lo, a, ga, ua = a, b, gb, ub
            b = lo + invphi * (hi - lo)
            gb, ub = G(b, ua)
    # endpoints matter when the maximizer sits on the boundary (e.g. delta = 0)
    g0, u0 = G(0.0, ub)
    cands = [(ga, a, ua), (gb, b, ub), (g0, 0.0, u0)]
    gbest, xbest, ubest = max(cands, key=lambda t: t[0])
    return DualSolveResult(gbest, np.array([xbest]), ubest, len(cache))


def occupation_of_policy(fm: FiniteCMDP, pi: np.ndarray) -> np.ndarray:
    """Normalized discounted occupation table of the action table ``pi``."""
    Ppi = fm.policy_matrix(pi)
    marg = np.linalg.solve((np.eye(fm.n_states) - fm.beta * Ppi).T, (1.0 - fm.beta) * fm.gamma)
    return marg[:, None] * pi


def _kelley(fm, K_bound, tol, vi_tol, max_rounds):
    q = fm.q
    cuts_d, cuts_g, cuts_s = [], [], []
    delta = np.zeros(q)
    best = (-np.inf, None, None)
    u = None
    for rnd in range(max_rounds):
        G, u = dual_function(fm, delta, vi_tol, u)
        pi = np.zeros_like(fm.c)
        pi[np.arange(fm.n_states), greedy_policy(fm, u, delta)] = 1.0
        zeta = occupation_of_policy(fm, pi)
        sub = fm.k - np.einsum("lia,ia->l", fm.d, zeta)
        if G > best[0]:
            best = (G, delta.copy(), u)
        cuts_d.append(delta.copy())
        cuts_g.append(G)
        cuts_s.append(sub)
        upper, delta = _kelley_master(cuts_d, cuts_g, cuts_s, K_bound)
        if upper - best[0] <= tol:
            break
    return DualSolveResult(best[0], best[1], best[2], rnd + 1)


def _kelley_master(ds, gs, ss, K):
    """max t s.t. t <= g_i + s_i.(delta - d_i), delta <= 0, |delta|_1 <= K.

    Written with m = -delta >= 0 and t = T - t_shift, T >= 0, in equality form.
    """
    q = ds[0].size
    cuts = len(gs)
    shift = max(abs(g) for g in gs) + K * max(np.abs(s).sum() for s in ss) + 1.0
    # variables: m (q), T, cut slacks (cuts), ball slack (1)
    nv = q + 1 + cuts + 1
    A = np.zeros((cuts + 1, nv))
    b = np.zeros(cuts + 1)
    for i, (d, g, s) in enumerate(zip(ds, gs, ss)):
        # T - shift <= g + s.(-m - d)  <=>  T + s.m + slack = g - s.d + shift
        A[i, :q] = s
        A[i, q] = 1.0
        A[i, q + 1 + i] = 1.0
        b[i] = g - s @ d + shift
    A[cuts, :q] = 1.0
    A[cuts, -1] = 1.0
    b[cuts] = K
    obj = np.zeros(nv)
    obj[q] = -1.0
    sol = solve_lp(LinearProgram(obj, A, b))
    if not sol.optimal:
        raise RuntimeError(f"cutting-plane master ended with status {sol.status}")
    return float(sol.x[q] - shift), -sol.x[:q]


def straddle_level(greedy_at, dstar: float, k: float, K_bound: float, eta: float, tol: float):
    """Greedy occupations on either side of the level ``k`` near ``dstar``.

    ``greedy_at(x)`` returns ``(zeta, J_d)`` for the greedy policy at
    multiplier ``x``.  Near a flat maximum the dual search can stop short of
    the kink by more than ``eta`` (the slope there is below the evaluation
    noise), so the left point is pushed out until it meets the level and the
    switch is then located by bisection.

    Raises
    ------
    InfeasibleError
        When even the heaviest penalty ``-K_bound`` misses the level.
    """
    step = eta
    lo = dstar - step
    low = greedy_at(lo)   # heavier penalty, smaller constraint cost
    while low[1] > k + 1e-12:
        if lo <= -K_bound:
            raise InfeasibleError("constraints infeasible at this grid")
        step *= 4.0
        lo = max(dstar - step, -K_bound)
        low = greedy_at(lo)
    hi = dstar + eta
    high = greedy_at(hi)
    if step > eta and high[1] > k:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            cur = greedy_at(mid)
            if cur[1] > k + 1e-12:
                hi, high = mid, cur
            else:
                lo, low = mid, cur
    return low, high


def solve_discounted_dual(fm: FiniteCMDP, K_bound: float, tol: float = 1e-9,
                          vi_tol: float = 1e-11, eta: float = 1e-6) -> DiscountedSolution:
    """Large-grid solver for one constraint without forming the LP.

    The dual is maximized by golden-section search.  With ``delta*`` the
    maximizer, the greedy policies at ``delta* - eta`` and ``delta* + eta``
    straddle the constraint level, and the mixture of their occupation
    measures that meets the level exactly is optimal (both policies are
    Lagrangian-optimal at ``delta*`` and the constraint is tight).  The
    residual ``relative_gap`` compares the mixture's cost with ``G(delta*)``.
    """
    if fm.q != 1:
        raise NotImplementedError("the dual route recovers primal solutions for one constraint")
    res = maximize_dual(fm, K_bound, tol, vi_tol)
    dstar = float(res.delta[0])

    def greedy_at(x):
        _, u = dual_function(fm, [min(x, 0.0)], vi_tol, res.u)
        pi = np.zeros_like(fm.c)
        pi[np.arange(fm.n_states), greedy_policy(fm, u, [min(x, 0.0)])] = 1.0
        zeta = occupation_of_policy(fm, pi)
        return zeta, float(np.sum(fm.d[0] * zeta))

    k = float(fm.k[0])
    (z_lo, j_lo), (z_hi, j_hi) = straddle_level(greedy_at, dstar, k, K_bound, eta, tol)
    if j_hi <= k or abs(j_lo - j_hi) < 1e-15:
        theta = 0.0 if j_hi <= k else 1.0
    else:
        theta = (k - j_hi) / (j_lo - j_hi)
    theta = min(1.0, max(0.0, theta))
    zeta = theta * z_lo + (1.0 - theta) * z_hi
    occ = OccupationMeasure(zeta)
    policy = StationaryPolicy.from_occupation(zeta)
    value = float(np.sum(fm.c * zeta))
    cert = DualCertificate(res.delta.copy(), res.u, res.value)
    cons = np.einsum("lia,ia->l", fm.d, zeta)
    out = DiscountedSolution(value, occ, policy, cert, cons, None)
    out.residuals = {
        "mass": abs(occ.mass - 1.0),
        "balance": occ.balance_residual(fm),
        "dual_violation": cert.violation(fm),
        "relative_gap": abs(value - res.value) / max(1.0, abs(value)),
        "constraint_excess": float(max(0.0, cons[0] - k)),
        "evaluations": res.evaluations,
    }
    return out
