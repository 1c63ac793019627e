"""Average-cost constrained finite models.

Under a whole-space minorization ``P[a, i, :] >= phi(i, a) lam`` with
``phi >= 1 - alpha_min`` every stationary policy induces a unichain with a
unique invariant law, and the problem becomes the linear program over
stationary occupation measures::

    minimize    <zeta, c>
    subject to  sum_a zeta(j, a) - sum_{i,a} P[a, i, j] zeta(i, a) = 0
                sum zeta = 1
                <zeta, d_l> + alpha_l = k_l,      zeta >= 0, alpha >= 0

The dual variables are a relative value ``h``, the gain ``rho`` (the
normalization row) and multipliers ``delta <= 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .discounted import straddle_level
from .lpcore import LinearProgram, LPSolution, solve_lp
from .policy import InfeasibleError, StationaryPolicy
from .quantize import FiniteCMDP

__all__ = [
    "StationaryOccupation",
    "AverageDual",
    "AverageSolution",
    "ErgodicityCertificate",
    "MinorizationReport",
    "UnichainError",
    "build_average_lp",
    "solve_average",
    "stationary_distribution",
    "stationary_of_matrix",
    "check_minorization_finite",
    "doeblin_constants",
    "tv_decay",
    "relative_value_iteration",
    "average_dual_function",
    "average_dual_sweep",
    "maximize_average_dual",
    "solve_average_dual",
]


class UnichainError(np.linalg.LinAlgError):
    """The invariant law is not unique at the working tolerance."""


@dataclass(frozen=True, eq=False)
class StationaryOccupation:
    zeta: np.ndarray

    @property
    def marginal(self) -> np.ndarray:
        return self.zeta.sum(axis=1)

    @property
    def mass(self) -> float:
        return float(self.zeta.sum())

    def flow_residual(self, fm: FiniteCMDP) -> float:
        inflow = np.einsum("ia,aij->j", self.zeta, fm.P)
        return float(np.abs(self.marginal - inflow).max())


@dataclass(frozen=True, eq=False)
class AverageDual:
    rho: float
    delta: np.ndarray
    h: np.ndarray

    def objective(self, k) -> float:
        return float(self.rho + np.asarray(k) @ self.delta)

    def violation(self, fm: FiniteCMDP) -> float:
        """Largest excess of ``rho + h`` over ``c_delta + P h``."""
        cd = fm.c - np.einsum("l,lia->ia", self.delta, fm.d)
        rhs = cd + fm.expect(self.h)[0]
        return float(max(0.0, (self.rho + self.h[:, None] - rhs).max()))


@dataclass(eq=False)
class AverageSolution:
    value: float
    occupation: StationaryOccupation
    policy: StationaryPolicy
    dual: AverageDual
    constraint_values: np.ndarray
    lp: LPSolution | None = None
    residuals: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.value, self.occupation, self.policy))


def build_average_lp(fm: FiniteCMDP) -> LinearProgram:
    n, A, q = fm.n_states, fm.n_actions, fm.q
    nz = n * A
    M = np.zeros((n + 1 + q, nz + q))
    flow = -np.transpose(fm.P, (2, 1, 0)).reshape(n, nz)
    cols = np.arange(nz)
    flow[cols // A, cols] += 1.0
    M[:n, :nz] = flow
    M[n, :nz] = 1.0
    for l in range(q):
        M[n + 1 + l, :nz] = fm.d[l].ravel()
        M[n + 1 + l, nz + l] = 1.0
    rhs = np.concatenate([np.zeros(n), [1.0], fm.k])
    obj = np.concatenate([fm.c.ravel(), np.zeros(q)])
    labels = tuple(f"z_{i}_{a}" for i in range(n) for a in range(A)) + tuple(
        f"s_{l}" for l in range(q))
    rows = tuple(f"flow_{j}" for j in range(n)) + ("mass",) + tuple(f"con_{l}" for l in range(q))
    return LinearProgram(obj, M, rhs, labels, rows)


def solve_average(fm: FiniteCMDP, **lp_options) -> AverageSolution:
    """Optimal gain, stationary occupation measure and policy.

    The model should satisfy the minorization condition (see
    :func:`check_minorization_finite`), which makes every stationary policy
    unichain so that the LP and the policy problem coincide.

    Raises
    ------
    InfeasibleError
        "constraints infeasible at this grid"; refine the grid or relax k.
    """
    lp = build_average_lp(fm)
    sol = solve_lp(lp, **lp_options)
    if sol.status == "infeasible":
        raise InfeasibleError("constraints infeasible at this grid (refine the grid or relax k)")
    if not sol.optimal:
        raise RuntimeError(f"stationary LP ended with status {sol.status}")
    n, A = fm.n_states, fm.n_actions
    zeta = sol.x[: n * A].reshape(n, A)
    occ = StationaryOccupation(zeta)
    policy = StationaryPolicy.from_occupation(zeta)
    h = sol.y[:n] - sol.y[0]
    dual = AverageDual(float(sol.y[n]), np.minimum(sol.y[n + 1:], 0.0), h)
    cons = np.einsum("lia,ia->l", fm.d, zeta)
    out = AverageSolution(sol.objective, occ, policy, dual, cons, sol)
    out.residuals = {
        **sol.residuals,
        "mass": abs(occ.mass - 1.0),
        "flow": occ.flow_residual(fm),
        "dual_violation": dual.violation(fm),
    }
    return out


def stationary_of_matrix(P: np.ndarray, tol: float = 1e-11) -> np.ndarray:
    """Unique invariant law of the stochastic matrix ``P`` by a direct solve.

    The system ``mu (I - P) = 0`` with one balance equation replaced by
    ``sum mu = 1`` is solved; the full residual must stay below ``tol``
    (relative to the matrix scale) or :class:`UnichainError` is raised.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    M = (np.eye(n) - P).T
    M[-1] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise UnichainError("chain not unichain at tolerance (singular system)") from None
    res = max(float(np.abs(mu @ P - mu).max()), abs(mu.sum() - 1.0))
    if not np.isfinite(mu).all() or res > tol * max(1.0, n) or mu.min() < -1e-9:
        raise UnichainError(f"chain not unichain at tolerance (residual {res:.2e})")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def stationary_distribution(fm: FiniteCMDP, policy) -> np.ndarray:
    table = policy.table if isinstance(policy, StationaryPolicy) else np.asarray(policy)
    return stationary_of_matrix(fm.policy_matrix(table))


@dataclass
class MinorizationReport:
    ok: bool
    degenerate: bool
    worst_violation: float
    worst_index: tuple | None
    phi_violation: float
    messages: list = field(default_factory=list)


def check_minorization_finite(fm: FiniteCMDP, tol: float = 1e-9) -> MinorizationReport:
    """Verify ``P[a, i, j] >= lam[j] phi[i, a] - tol`` and ``phi >= 1 - alpha_min - tol``."""
    if fm.phi is None or fm.lam is None:
        raise ValueError("finite model carries no minorization data")
    gap = fm.P - fm.lam[None, None, :] * fm.phi.T[:, :, None]
    worst = float(gap.min())
    idx = tuple(int(v) for v in np.unravel_index(int(np.argmin(gap)), gap.shape))
    phi_gap = 0.0
    if fm.alpha_min is not None:
        phi_gap = float(max(0.0, (1.0 - fm.alpha_min) - fm.phi.min()))
    degenerate = float(fm.lam.sum()) <= tol or float(fm.phi.max()) <= tol
    ok = worst >= -tol and phi_gap <= tol
    msgs = []
    if degenerate:
        msgs.append("degenerate minorization: lambda or phi vanishes, the check is vacuous")
    if worst < -tol:
        a, i, j = idx
        msgs.append(f"violation {worst:.3e} at action {a}, state {i}, target {j}")
    if phi_gap > tol:
        msgs.append(f"phi below 1 - alpha_min by {phi_gap:.3e}")
    return MinorizationReport(ok, degenerate, worst, idx if worst < -tol else None, phi_gap, msgs)


@dataclass
class ErgodicityCertificate:
    """Geometric bound ``|p^t(x, .) - mu|_1 <= R kappa_erg^t``.

    Total variation is measured in the L1 convention, so ``R = 2`` bounds the
    initial distance and every step contracts it by the Doeblin factor.
    """

    R: float
    kappa_erg: float
    warnings: list = field(default_factory=list)

    def bound(self, t) -> np.ndarray:
        return self.R * self.kappa_erg ** np.asarray(t, dtype=float)

    def validate(self, P: np.ndarray, t_max: int = 50, mu=None):
        """Exact decay on ``P``; returns (decay, violations) for t = 1..t_max."""
        decay = tv_decay(P, t_max, mu)
        viol = np.flatnonzero(decay > self.bound(np.arange(1, t_max + 1)) + 1e-12) + 1
        return decay, viol


def doeblin_constants(alpha_min: float) -> ErgodicityCertificate:
    if not 0.0 <= alpha_min <= 1.0:
        raise ValueError("alpha_min must lie in [0, 1]")
    notes = []
    if alpha_min >= 1.0 - 1e-9:
        notes.append("alpha_min near 1: the geometric bound degenerates")
        warnings.warn(notes[-1], stacklevel=2)
    return ErgodicityCertificate(2.0, float(alpha_min), notes)


def tv_decay(P: np.ndarray, t_max: int, mu=None) -> np.ndarray:
    """``max_x |P^t(x, .) - mu|_1`` for t = 1..t_max."""
    P = np.asarray(P, dtype=float)
    mu = stationary_of_matrix(P) if mu is None else mu
    out = np.empty(t_max)
    Pt = np.eye(P.shape[0])
    for t in range(t_max):
        Pt = Pt @ P
        out[t] = np.abs(Pt - mu[None, :]).sum(axis=1).max()
    return out


def relative_value_iteration(fm: FiniteCMDP, delta, tol: float = 1e-10, h0=None,
                             max_iter: int = 200_000):
    """Gain and relative value of the Lagrangian average-cost problem.

    Iterates ``h <- T h - (T h)(0)`` with ``T h = min_a [c_delta + P h]``
    and stops when the span of ``T h - h`` is at most ``tol``; the gain is
    the midpoint of its range, so the ACOE residual is at most ``tol / 2``.

    Returns
    -------
    rho : float or ndarray (batch)
    h : ndarray
        Anchored with ``h[0] = 0``.
    """
    d = np.asarray(delta, dtype=float)
    single = d.ndim <= 1
    d = d.reshape(-1, fm.q) if fm.q else np.zeros((1 if single else d.shape[0], 0))
    if (d > 0).any():
        raise ValueError("multipliers must be nonpositive")
    cd = fm.c[None] - np.einsum("bl,lia->bia", d, fm.d)
    h = np.zeros((d.shape[0], fm.n_states)) if h0 is None else np.array(
        np.broadcast_to(h0, (d.shape[0], fm.n_states)), dtype=float)
    span = np.inf
    for _ in range(max_iter):
        Th = (cd + fm.expect(h)).min(axis=2)
        diff = Th - h
        lo, hi = diff.min(axis=1), diff.max(axis=1)
        span = float((hi - lo).max())
        h = Th - Th[:, :1]
        if span <= tol:
            break
    else:
        raise RuntimeError(f"relative value iteration did not converge (span {span:.3e})")
    rho = 0.5 * (lo + hi)
    return (float(rho[0]), h[0]) if single else (rho, h)


def average_dual_function(fm: FiniteCMDP, delta, tol: float = 1e-10, h0=None):
    """``rho_delta + <k, delta>`` and the relative value."""
    delta = np.asarray(delta, dtype=float).reshape(fm.q)
    rho, h = relative_value_iteration(fm, delta, tol, h0)
    return float(rho + fm.k @ delta), h


def average_dual_sweep(fm: FiniteCMDP, K_bound: float, grid_pts: int, tol: float = 1e-11,
                       batch: int = 2048):
    """Lattice maximization of the average-cost dual function."""
    from .discounted import _simplex_points

    pts = -K_bound * _simplex_points(fm.q, grid_pts) / grid_pts
    best_val, best = -np.inf, None
    h0 = None
    for start in range(0, pts.shape[0], batch):
        chunk = pts[start:start + batch]
        rho, h = relative_value_iteration(fm, chunk, tol, h0)
        G = rho + chunk @ fm.k
        i = int(np.argmax(G))
        if G[i] > best_val:
            best_val, best = float(G[i]), chunk[i].copy()
        h0 = h[-1]
    return best, best_val


def maximize_average_dual(fm: FiniteCMDP, K_bound: float, tol: float = 1e-9,
                          rvi_tol: float = 1e-11):
    """Golden-section maximization of the dual for one constraint.

    Returns ``(value, delta, h)``.
    """
    if fm.q == 0:
        rho, h = relative_value_iteration(fm, np.zeros(0), rvi_tol)
        return rho, np.zeros(0), h
    if fm.q != 1:
        raise NotImplementedError("dual maximization without the LP supports one constraint")
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = -K_bound, 0.0
    cache = {}

    def G(x, h0=None):
        if x not in cache:
            cache[x] = average_dual_function(fm, [x], rvi_tol, h0)
        return cache[x]

    a = hi - invphi * (hi - lo)
    b = lo + invphi * (hi - lo)
    ga, ha = G(a)
    gb, hb = G(b, ha)
    while hi - lo > tol:
        if ga >= gb:
            hi, b, gb, hb = b, a, ga, ha
            a = hi - invphi * (hi - lo)
            ga, ha = G(a, hb)
        else:
            lo, a, ga, ha = a, b, gb, hb
            b = lo + invphi * (hi - lo)
            gb, hb = G(b, ha)
    g0, h0 = G(0.0, hb)
    gbest, xbest, hbest = max([(ga, a, ha), (gb, b, hb), (g0, 0.0, h0)], key=lambda t: t[0])
    return gbest, np.array([xbest]), hbest


def stationary_occupation_of_policy(fm: FiniteCMDP, pi: np.ndarray) -> np.ndarray:
    return stationary_distribution(fm, pi)[:, None] * pi


def solve_average_dual(fm: FiniteCMDP, K_bound: float, tol: float = 1e-9,
                       rvi_tol: float = 1e-11, eta: float = 1e-6) -> AverageSolution:
    """Large-grid solver for one constraint without forming the LP.

    Mirrors the discounted dual route: the stationary occupation measures of
    the greedy policies on either side of the optimal multiplier are mixed
    so that the constraint holds with equality.
    """
    if fm.q != 1:
        raise NotImplementedError("the dual route recovers primal solutions for one constraint")
    gval, delta, h = maximize_average_dual(fm, K_bound, tol, rvi_tol)
    dstar = float(delta[0])

    def greedy_at(x):
        x = min(x, 0.0)
        rho, hx = relative_value_iteration(fm, [x], rvi_tol, h)
        cd = fm.c - x * fm.d[0]
        pi = np.zeros_like(fm.c)
        pi[np.arange(fm.n_states), (cd + fm.expect(hx)[0]).argmin(axis=1)] = 1.0
        zeta = stationary_occupation_of_policy(fm, pi)
        return zeta, float(np.sum(fm.d[0] * zeta))

    k = float(fm.k[0])
    try:
        (z_lo, j_lo), (z_hi, j_hi) = straddle_level(greedy_at, dstar, k, K_bound, eta, tol)
    except InfeasibleError:
        raise InfeasibleError("constraints infeasible at this grid (refine the grid or relax k)") from None
    if j_hi <= k or abs(j_lo - j_hi) < 1e-15:
        theta = 0.0 if j_hi <= k else 1.0
    else:
        theta = (k - j_hi) / (j_lo - j_hi)
    theta = min(1.0, max(0.0, theta))
    zeta = theta * z_lo + (1.0 - theta) * z_hi
    occ = StationaryOccupation(zeta)
    policy = StationaryPolicy.from_occupation(zeta)
    value = float(np.sum(fm.c * zeta))
    dual = AverageDual(float(gval - fm.k @ delta), delta.copy(), h)
    cons = np.einsum("lia,ia->l", fm.d, zeta)
    out = AverageSolution(value, occ, policy, dual, cons, None)
    out.residuals = {
        "mass": abs(occ.mass - 1.0),
        "flow": occ.flow_residual(fm),
        "relative_gap": abs(value - gval) / max(1.0, abs(value)),
        "constraint_excess": float(max(0.0, cons[0] - k)),
    }
    return out
