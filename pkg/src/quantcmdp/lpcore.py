"""Dense-tableau two-phase primal simplex for equality-form linear programs.

Problems are stated as::

    minimize    c @ z
    subject to  A @ z == b,  z >= 0

Bland's smallest-index rule is used for both the entering and the leaving
variable, so the method terminates on degenerate problems (occupation-measure
programs are routinely degenerate).  When the method stops at an optimal
basis, primal and dual values are recomputed from the basis matrix with a
direct linear solve so that the reported certificate is accurate to roughly
machine precision rather than to the accumulated tableau round-off.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "LinearProgram",
    "LPSolution",
    "LPError",
    "solve_lp",
    "dump_lp",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


class LPError(ValueError):
    """Raised for malformed linear programs."""


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    labels: tuple[str, ...] = ()
    row_labels: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        A = np.atleast_2d(np.asarray(self.eq_matrix, dtype=float))
        b = np.asarray(self.eq_rhs, dtype=float).reshape(-1)
        if A.shape != (b.size, c.size):
            raise LPError(
                f"inconsistent dimensions: A is {A.shape}, b has {b.size}, c has {c.size}"
            )
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()):
            raise LPError("non-finite coefficient")
        if self.labels and len(self.labels) != c.size:
            raise LPError("one label per variable required")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "eq_matrix", A)
        object.__setattr__(self, "eq_rhs", b)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.eq_rhs.size


@dataclass
class LPSolution:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    objective: float = float("nan")
    basis: np.ndarray | None = None
    iterations: int = 0
    farkas: np.ndarray | None = None
    farkas_row: int | None = None
    ray: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def reduced_costs(self, lp: LinearProgram) -> np.ndarray:
        return lp.objective - lp.eq_matrix.T @ self.y


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    prow = T[row] / T[row, col]
    colv = T[:, col].copy()
    T -= np.outer(colv, prow)
    T[row] = prow


def _bland_leaving(T, col, basis, ratio_tol):
    m = basis.size
    column = T[:m, col]
    eligible = np.flatnonzero(column > ratio_tol)
    if eligible.size == 0:
        return None
    ratios = T[eligible, -1] / column[eligible]
    best = ratios.min()
    scale = max(1.0, abs(best))
    ties = eligible[ratios <= best + 1e-12 * scale]
    return int(ties[np.argmin(basis[ties])])


def _run_simplex(T, basis, allowed, feas_tol, ratio_tol, max_iter):
    """Iterate on tableau ``T`` in place; the last row holds reduced costs."""
    m = basis.size
    it = 0
    while True:
        d = T[m, :-1]
        candidates = np.flatnonzero((d < -feas_tol) & allowed)
        if candidates.size == 0:
            return OPTIMAL, it, None
        col = int(candidates[0])
        row = _bland_leaving(T, col, basis, ratio_tol)
        if row is None:
            return UNBOUNDED, it, col
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        if it >= max_iter:
            return ITERATION_LIMIT, it, None


def _unit_columns(A: np.ndarray, b: np.ndarray) -> dict[int, int]:
    """Map row -> column for columns that are positive multiples of e_row."""
    found: dict[int, int] = {}
    nz = A != 0
    counts = nz.sum(axis=0)
    for j in np.flatnonzero(counts == 1):
        i = int(np.flatnonzero(nz[:, j])[0])
        if i not in found and A[i, j] > 0:
            found[i] = int(j)
    return found


def solve_lp(
    lp: LinearProgram,
    *,
    feas_tol: float = 1e-9,
    ratio_tol: float = 1e-7,
    max_iter: int = 200_000,
) -> LPSolution:
    """Solve an equality-form LP with the two-phase Bland simplex.

    Parameters
    ----------
    lp : LinearProgram
        Problem data; all variables are constrained to be nonnegative.
    feas_tol : float
        Optimality threshold on reduced costs and the phase-one objective.
    ratio_tol : float
        Smallest column entry accepted as a pivot in the ratio test.
    max_iter : int
        Pivot limit across both phases.

    Returns
    -------
    LPSolution
        On ``optimal`` the primal ``x``, equality duals ``y`` (one per row,
        so that ``A.T @ y <= c``) and residual diagnostics.  On
        ``infeasible`` a Farkas vector ``farkas`` with ``A.T @ farkas <= 0``
        and ``b @ farkas > 0``; on ``unbounded`` a recession ray.
    """
    A = lp.eq_matrix.copy()
    b = lp.eq_rhs.copy()
    c = lp.objective
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b *= sign

    units = _unit_columns(A, b)
    art_rows = [i for i in range(m) if i not in units]
    n_art = len(art_rows)
    ncols = n + n_art

    T = np.zeros((m + 1, ncols + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = np.empty(m, dtype=int)
    for i, j in units.items():
        scale = A[i, j]
        T[i] /= scale
        basis[i] = j
    for k, i in enumerate(art_rows):
        T[i, n + k] = 1.0
        basis[i] = n + k

    iterations = 0
    # phase one: minimize the sum of artificials
    if n_art:
        T[m, :] = 0.0
        T[m, n:ncols] = 1.0
        for i in art_rows:
            T[m] -= T[i]
        allowed = np.ones(ncols, dtype=bool)
        status, it, _ = _run_simplex(T, basis, allowed, feas_tol, ratio_tol, max_iter)
        iterations += it
        if status == ITERATION_LIMIT:
            return LPSolution(ITERATION_LIMIT, iterations=iterations)
        phase1 = -T[m, -1]
        if phase1 > feas_tol * max(1.0, np.abs(b).max()):
            y1 = _phase_one_duals(A, basis, n)
            y1 = y1 * sign
            return LPSolution(
                INFEASIBLE,
                iterations=iterations,
                farkas=y1,
                farkas_row=int(np.argmax(np.abs(y1))),
                residuals={"phase_one_objective": float(phase1)},
            )
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n:
                row = T[i, :n]
                cand = np.flatnonzero(np.abs(row) > ratio_tol)
                if cand.size:
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                    iterations += 1
                else:
                    keep[i] = False
        T = np.vstack([T[:m][keep], T[m:]])
        T = np.hstack([T[:, :n], T[:, -1:]])
        basis = basis[keep]
    else:
        keep = np.ones(m, dtype=bool)

    # phase two
    mk = basis.size
    cb = c[basis]
    T[mk, :n] = c - cb @ T[:mk, :n]
    T[mk, -1] = -cb @ T[:mk, -1]
    allowed = np.ones(n, dtype=bool)
    status, it, col = _run_simplex(T, basis, allowed, feas_tol, ratio_tol, max_iter)
    iterations += it
    if status == ITERATION_LIMIT:
        return LPSolution(ITERATION_LIMIT, iterations=iterations)
    if status == UNBOUNDED:
        ray = np.zeros(n)
        ray[col] = 1.0
        ray[basis] = -T[:mk, col]
        return LPSolution(UNBOUNDED, iterations=iterations, ray=ray)

    x, y_kept = _refine(A[keep], b[keep], c, basis)
    y = np.zeros(m)
    y[keep] = y_kept
    y *= sign
    sol = LPSolution(
        OPTIMAL,
        x=x,
        y=y,
        objective=float(c @ x),
        basis=basis.copy(),
        iterations=iterations,
    )
    sol.residuals = certificate_residuals(lp, sol)
    return sol


def _phase_one_duals(A, basis, n):
    m = A.shape[0]
    B = np.zeros((m, m))
    cb = np.zeros(m)
    for i, j in enumerate(basis):
        if j < n:
            B[:, i] = A[:, j]
        else:
            B[i, i] = 1.0
            cb[i] = 1.0
    try:
        return np.linalg.solve(B.T, cb)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(B.T, cb, rcond=None)[0]


def _refine(A, b, c, basis):
    """Recompute the basic solution and duals from the basis matrix."""
    B = A[:, basis]
    xb = np.linalg.solve(B, b)
    y = np.linalg.solve(B.T, c[basis])
    x = np.zeros(A.shape[1])
    x[basis] = np.where(np.abs(xb) < 1e-14, 0.0, xb)
    return x, y


def certificate_residuals(lp: LinearProgram, sol: LPSolution) -> dict:
    """Primal/dual feasibility, complementary slackness and duality gap."""
    A, b, c = lp.eq_matrix, lp.eq_rhs, lp.objective
    x, y = sol.x, sol.y
    red = c - A.T @ y
    primal = float(np.abs(A @ x - b).max(initial=0.0))
    negativity = float(max(0.0, -x.min(initial=0.0)))
    dual = float(max(0.0, -red.min(initial=0.0)))
    comp = float(np.abs(x * red).max(initial=0.0))
    pobj = float(c @ x)
    dobj = float(b @ y)
    gap = abs(pobj - dobj) / max(1.0, abs(pobj))
    return {
        "primal": primal,
        "negativity": negativity,
        "dual": dual,
        "complementarity": comp,
        "gap": gap,
        "dual_objective": dobj,
    }


def dump_lp(lp: LinearProgram, labels: Sequence[str] | None = None) -> str:
    """Plain-text standard-form dump (one line per row) for external checks."""
    names = list(labels or lp.labels or [f"z{j}" for j in range(lp.n_vars)])

    def fmt(coefs):
        terms = [f"{float(v)!r} {names[j]}" for j, v in enumerate(coefs) if v != 0.0]
        return " + ".join(terms) if terms else "0"

    lines = [f"minimize {fmt(lp.objective)}", "subject to"]
    for i in range(lp.n_rows):
        tag = lp.row_labels[i] if lp.row_labels else f"r{i}"
        lines.append(f"  {tag}: {fmt(lp.eq_matrix[i])} = {float(lp.eq_rhs[i])!r}")
    lines.append("bounds")
    lines.append("  all variables >= 0")
    lines.append("end")
    return "\n".join(lines) + "\n"


def replace(lp: LinearProgram, **changes) -> LinearProgram:
    return dataclasses.replace(lp, **changes)
