import hashlib
import itertools
from pathlib import Path

import numpy as np
import pytest

import quantcmdp
from quantcmdp.families import inv1
from quantcmdp.quantize import build_finite_model, build_grid

SRC = Path(quantcmdp.__file__).parent
REF_RESOLUTION = 4096


def exact_discounted(P, c, d, gamma, beta, pi):
    """Independent evaluation by a dense linear solve.

    ``pi`` may carry leading batch axes: shape (..., n, A).
    """
    P_pi = np.einsum("...ia,aij->...ij", pi, P)
    n = P.shape[1]
    M = np.eye(n) - beta * P_pi
    c_pi = np.einsum("...ia,ia->...i", pi, c)
    d_pi = np.einsum("...ia,lia->...li", pi, d)
    rhs = np.concatenate([c_pi[..., None], np.swapaxes(d_pi, -1, -2)], axis=-1)
    sol = np.linalg.solve(M, rhs)
    vals = (1.0 - beta) * np.einsum("i,...ij->...j", gamma, sol)
    return vals[..., 0], vals[..., 1:]


def stationary_law(P_pi):
    """Stationary distribution by an independent linear solve (unichain)."""
    n = P_pi.shape[-1]
    A = np.swapaxes(P_pi, -1, -2) - np.eye(n)
    A = A.copy()
    A[..., -1, :] = 1.0
    b = np.zeros(P_pi.shape[:-2] + (n,))
    b[..., -1] = 1.0
    return np.linalg.solve(A, b[..., None])[..., 0]


def exact_average(P, c, d, pi):
    P_pi = np.einsum("...ia,aij->...ij", pi, P)
    mu = stationary_law(P_pi)
    c_pi = np.einsum("...ia,ia->...i", pi, c)
    d_pi = np.einsum("...ia,lia->...li", pi, d)
    return np.einsum("...i,...i->...", mu, c_pi), np.einsum("...i,...li->...l", mu, d_pi)


def deterministic_tables(n_states, n_actions):
    """All deterministic policies as one-hot tables, shape (A**n, n, A)."""
    choices = np.array(list(itertools.product(range(n_actions), repeat=n_states)))
    tabs = np.zeros((choices.shape[0], n_states, n_actions))
    rows = np.arange(n_states)
    for k, ch in enumerate(choices):
        tabs[k, rows, ch] = 1.0
    return tabs


def surrogate_chain(model, grid, ext, rng, y_nodes=10):
    """Finite chain read off the surrogate at one random state per cell."""
    from quantcmdp.quantize import Surrogate

    sur = Surrogate(model, grid)
    x = grid.cell_lower(np.arange(grid.n)) + rng.random((grid.n, grid.dim)) * grid.cell_widths
    pi = ext(x)
    P = np.stack([sur.cell_masses(x, a, y_nodes) for a in range(model.n_actions)])
    c = np.stack([sur.b(x, a) for a in range(model.n_actions)], axis=1)
    d = np.stack([sur.r(x, a) for a in range(model.n_actions)], axis=2)
    return P, c, d, pi, sur.fm


def _source_hash() -> str:
    h = hashlib.sha256()
    for f in sorted(SRC.glob("*.py")):
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def inv1_model():
    return inv1()


@pytest.fixture(scope="session")
def inv1_reference(request, inv1_model):
    """Optimal values of inv1 on the n = 4096 grid for both criteria.

    Computed by the Lagrangian dual route (the dense LP is out of reach at
    this size) and cached across sessions, keyed by the package sources.
    """
    from quantcmdp.average import solve_average_dual
    from quantcmdp.discounted import solve_discounted_dual
    from quantcmdp.policy import dual_bound_K

    cache = getattr(request.config, "cache", None)
    key = f"quantcmdp/inv1_ref_{REF_RESOLUTION}_{inv1_model.digest()}_{_source_hash()}"
    if cache is not None:
        hit = cache.get(key, None)
        if hit is not None:
            return hit
    grid = build_grid(inv1_model.space, (REF_RESOLUTION,))
    fm = build_finite_model(inv1_model, grid)
    K = dual_bound_K(inv1_model.sup_norms()[0], inv1_model.regularity.alpha_slater)
    disc = solve_discounted_dual(fm, K, tol=1e-7, vi_tol=1e-10)
    avg = solve_average_dual(fm, K, tol=1e-7, rvi_tol=1e-10)
    ref = {"discounted": disc.value, "average": avg.value}
    del fm
    if cache is not None:
        cache.set(key, ref)
    return ref


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            num = int(name.split("_")[2])
            if outcome != "passed" or num not in lines:
                detail = dict(rep.user_properties).get("detail", "")
                lines[num] = (name, "PASS" if outcome == "passed" else "FAIL", detail)
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            name, verdict, detail = lines[num]
            terminalreporter.write_line(f"criterion {num}: {verdict}  {name}")
            if detail:
                terminalreporter.write_line(f"    {detail}")
