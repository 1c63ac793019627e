"""Randomized stationary policies, their extension to the box, and the
constraint-tightening procedure that turns finite-model optima into feasible
policies for the continuous model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import StateSpace
from .quantize import FiniteCMDP, Grid, build_finite_model, build_grid, quantize_point

__all__ = [
    "StationaryPolicy",
    "ExtendedPolicy",
    "PerturbationReport",
    "InfeasibleError",
    "extend_policy",
    "load_extended_policy",
    "perturbed_solve",
    "choose_eps",
    "dual_bound_K",
    "solve_finite",
    "escalate",
    "EscalationResult",
    "LP_STATE_LIMIT",
]

# above this many states the dense simplex is replaced by the dual route
LP_STATE_LIMIT = 600


class InfeasibleError(RuntimeError):
    """The finite constrained problem has no feasible point."""


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Row-stochastic action-distribution table over finite states."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim != 2:
            raise ValueError("policy table must be 2-D (states x actions)")
        if (t < -1e-12).any() or np.abs(t.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("policy rows must be probability vectors")
        t = np.clip(t, 0.0, None)
        object.__setattr__(self, "table", t / t.sum(axis=1, keepdims=True))

    @classmethod
    def from_occupation(cls, zeta: np.ndarray, threshold: float = 1e-12) -> "StationaryPolicy":
        """Disintegrate an occupation table; unvisited states get the uniform row."""
        zeta = np.clip(np.asarray(zeta, dtype=float), 0.0, None)
        marg = zeta.sum(axis=1)
        table = np.full_like(zeta, 1.0 / zeta.shape[1])
        seen = marg > threshold
        table[seen] = zeta[seen] / marg[seen, None]
        return cls(table)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "StationaryPolicy":
        actions = np.asarray(actions, dtype=int)
        t = np.zeros((actions.size, n_actions))
        t[np.arange(actions.size), actions] = 1.0
        return cls(t)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    def randomized_states(self, tol: float = 1e-9) -> np.ndarray:
        """Indices of states with two or more actions of positive probability."""
        return np.flatnonzero((self.table > tol).sum(axis=1) >= 2)

    def sample(self, states, rng: np.random.Generator, u=None) -> np.ndarray:
        """Draw one action per entry of ``states`` by inverse CDF."""
        cum = np.cumsum(self.table[np.asarray(states)], axis=1)
        if u is None:
            u = rng.random(cum.shape[0])
        return np.minimum((cum < u[:, None]).sum(axis=1), self.n_actions - 1)


@dataclass(frozen=True, eq=False)
class ExtendedPolicy:
    """Finite policy extended to the box: constant on every quantization cell."""

    base: StationaryPolicy
    grid: Grid

    def __post_init__(self):
        if self.base.n_states != self.grid.n:
            raise ValueError("policy and grid sizes differ")

    @property
    def n_actions(self) -> int:
        return self.base.n_actions

    def cell(self, x) -> np.ndarray:
        return quantize_point(self.grid, np.asarray(x, dtype=float).reshape(-1, self.grid.dim))

    def __call__(self, x) -> np.ndarray:
        """Action distributions at the states ``x``, shape (N, A)."""
        return self.base.table[self.cell(x)]

    def sample(self, x, rng: np.random.Generator, u=None) -> np.ndarray:
        return self.base.sample(self.cell(x), rng, u)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.digest(),
            "resolution": list(self.grid.resolution),
            "cell_nodes": self.grid.cell_nodes,
            "lower": self.grid.space.lower.tolist(),
            "upper": self.grid.space.upper.tolist(),
            "table": self.base.table.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def extend_policy(policy: StationaryPolicy, grid: Grid) -> ExtendedPolicy:
    return ExtendedPolicy(policy, grid)


def load_extended_policy(data) -> ExtendedPolicy:
    """Rebuild an extended policy from ``ExtendedPolicy.to_dict`` output or
    its JSON text; the grid digest must match the rebuilt grid."""
    if isinstance(data, (str, bytes)):
        data = json.loads(data)
    space = StateSpace(np.asarray(data["lower"], float), np.asarray(data["upper"], float))
    grid = build_grid(space, tuple(data["resolution"]), data.get("cell_nodes"))
    if grid.digest() != data["grid"]:
        raise ValueError("grid digest mismatch: policy was built on a different grid")
    return ExtendedPolicy(StationaryPolicy(np.asarray(data["table"], float)), grid)


def dual_bound_K(sup_c: float, alpha_slater) -> float:
    """Bound ``2 |c| / min_l alpha_l`` on the l1 norm of optimal multipliers."""
    a = float(np.min(alpha_slater))
    if a <= 0:
        raise ValueError("Slater slack must be positive")
    return 2.0 * sup_c / a


def choose_eps(kappa_target: float, sup_c: float, alpha_slater, criterion: str = "discounted"):
    """Constraint tightening ``eps = kappa / (3 K)``.

    The same bound K is used for both criteria.  The result is clipped
    strictly below the applicable Slater cap (``min alpha`` for discounted,
    half of it for average cost), with a warning when clipping occurs.

    Returns
    -------
    eps : float
    clipped : bool
    """
    if kappa_target <= 0:
        raise ValueError("kappa_target must be positive")
    K = dual_bound_K(sup_c, alpha_slater)
    eps = kappa_target / (3.0 * K)
    cap = float(np.min(alpha_slater)) * (0.5 if criterion == "average" else 1.0)
    if eps >= cap:
        eps = 0.99 * cap
        warnings.warn(f"eps clipped to {eps:.4g} below the Slater cap {cap:.4g}", stacklevel=2)
        return eps, True
    return eps, False


def solve_finite(fm: FiniteCMDP, criterion: str = "discounted", method: str = "auto",
                 K_bound: float | None = None):
    """Solve a finite model by the occupation LP or, for one constraint on
    large grids, by the Lagrangian dual with primal recovery.

    ``method`` is ``"lp"``, ``"dual"`` or ``"auto"`` (LP up to
    ``LP_STATE_LIMIT`` states).  The dual route needs ``K_bound``.
    """
    from .average import solve_average, solve_average_dual
    from .discounted import solve_discounted, solve_discounted_dual

    if criterion not in ("discounted", "average"):
        raise ValueError(f"unknown criterion {criterion!r}")
    if method == "auto":
        method = "lp" if fm.n_states <= LP_STATE_LIMIT or fm.q != 1 or K_bound is None else "dual"
    if method == "lp":
        return solve_discounted(fm) if criterion == "discounted" else solve_average(fm)
    if method == "dual":
        if K_bound is None:
            raise ValueError("the dual route needs the multiplier bound K")
        if criterion == "discounted":
            return solve_discounted_dual(fm, K_bound)
        return solve_average_dual(fm, K_bound)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class PerturbationReport:
    criterion: str
    eps: float
    n: int
    value: float
    k_used: np.ndarray
    finite_constraints: np.ndarray
    solution: object = None
    finite_model: FiniteCMDP | None = None
    notes: list = field(default_factory=list)


def perturbed_solve(model, grid: Grid, eps: float, criterion: str = "discounted",
                    fm: FiniteCMDP | None = None, check_cap: bool = True,
                    method: str = "auto"):
    """Solve the finite model with levels ``k - eps`` and extend its optimum.

    Parameters
    ----------
    model : ContinuousCMDP
    grid : Grid
    eps : float
        Tightening; must lie below the Slater cap when the slack is declared.
    criterion : {"discounted", "average"}
    fm : FiniteCMDP, optional
        Prebuilt finite model on ``grid`` (levels are replaced).

    Raises
    ------
    InfeasibleError
        "grid too coarse for this eps" when the tightened problem is infeasible.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    slack = model.regularity.alpha_slater
    if check_cap and slack is not None and eps > 0:
        cap = float(np.min(slack)) * (0.5 if criterion == "average" else 1.0)
        if eps >= cap:
            raise ValueError(f"eps={eps} violates the Slater cap {cap}")
    if fm is None:
        fm = build_finite_model(model, grid)
    k_used = model.k - eps
    if (k_used <= 0).any():
        raise InfeasibleError(f"grid too coarse for this eps: tightened levels {k_used} not positive")
    tight = fm.with_k(k_used)
    K_bound = None
    if slack is not None:
        K_bound = dual_bound_K(model.sup_norms()[0], slack)
    try:
        sol = solve_finite(tight, criterion, method, K_bound)
    except InfeasibleError as exc:
        raise InfeasibleError(f"grid too coarse for this eps ({exc})") from None
    ext = extend_policy(sol.policy, grid)
    report = PerturbationReport(criterion, float(eps), grid.n, sol.value, k_used,
                                sol.constraint_values, sol, tight)
    return ext, report


@dataclass
class EscalationResult:
    policy: ExtendedPolicy
    report: PerturbationReport
    evaluation: object
    resolution: int
    history: list


def escalate(model, eps: float, criterion: str = "discounted", start: int = 4,
             max_resolution: int = 4096, method: str = "auto", **mc_options) -> EscalationResult:
    """Double the per-axis resolution until the tightened problem is
    feasible and every Monte Carlo constraint margin
    ``k - (estimate + half_width + bias)`` is positive.

    ``mc_options`` go to ``mc_eval_original``.  ``history`` lists one
    ``(resolution, outcome)`` pair per attempt.

    Raises
    ------
    InfeasibleError
        When ``max_resolution`` is passed without success.
    """
    from .evaluate import mc_eval_original

    history = []
    r = start
    while r <= max_resolution:
        grid = build_grid(model.space, (r,) * model.dim)
        try:
            ext, rep = perturbed_solve(model, grid, eps, criterion, method=method)
        except InfeasibleError as exc:
            history.append((r, f"infeasible: {exc}"))
            r *= 2
            continue
        ev = mc_eval_original(model, ext, criterion, **mc_options)
        margins = model.k - ev.constraints - ev.constraints_hw - ev.constraints_bias
        history.append((r, f"min margin {float(margins.min()) if margins.size else 0.0!r}"))
        if (margins > 0).all():
            return EscalationResult(ext, rep, ev, r, history)
        r *= 2
    raise InfeasibleError(f"escalation exhausted at resolution {max_resolution}: {history}")
