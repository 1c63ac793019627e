"""Product-grid quantization of the state box and the induced finite model.

The grid consists of cell centers of an axis-aligned product partition.  The
nearest-neighbour rule with ties broken toward the lower index reproduces
exactly this partition (half-open cells ``(e_i, e_{i+1}]`` per axis, the
first cell also containing its lower edge), so the quantizer and the cells
agree by construction.

Grid states are flattened in C order: the first axis varies slowest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import ContinuousCMDP, ModelError, StateSpace

__all__ = [
    "Grid",
    "FiniteCMDP",
    "Surrogate",
    "build_grid",
    "quantize_point",
    "build_finite_model",
    "surrogate_evaluators",
    "load_finite_model",
]

# gauss-legendre nodes are used up to this dimension, seeded monte carlo above
_GL_MAX_DIM = 3


@dataclass(frozen=True, eq=False)
class Grid:
    """Cell-center product grid.

    Attributes
    ----------
    space : StateSpace
    resolution : tuple of int
        Cells per axis.
    points : ndarray, shape (n, dim)
        Representatives, C-ordered.
    axis_edges : tuple of ndarray
        Cell boundaries per axis.
    node_offsets : ndarray, shape (m, dim)
        Quadrature nodes of the weighting measure in unit-cell coordinates.
    node_weights : ndarray, shape (n, m)
        Per-cell quadrature weights (each row sums to one).
    """

    space: StateSpace
    resolution: tuple
    points: np.ndarray
    axis_edges: tuple
    node_offsets: np.ndarray
    node_weights: np.ndarray
    cell_nodes: int = 1
    nu_name: str = "uniform"

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def n(self) -> int:
        """Cardinality of the grid (the ``n`` of the rate formulas)."""
        return self.points.shape[0]

    @property
    def cell_widths(self) -> np.ndarray:
        return self.space.widths / np.asarray(self.resolution, dtype=float)

    @property
    def covering_radius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.cell_widths))

    @property
    def alpha_cov(self) -> float:
        """Covering coefficient: ``covering_radius = alpha_cov * (1/n)**(1/dim)``."""
        return self.covering_radius * self.n ** (1.0 / self.dim)

    def cell_lower(self, idx) -> np.ndarray:
        return self.points[idx] - 0.5 * self.cell_widths

    def cell_nodes_of(self, idx) -> np.ndarray:
        """Quadrature nodes of cells ``idx``: shape (len(idx), m, dim)."""
        idx = np.atleast_1d(idx)
        lo = self.cell_lower(idx)
        return lo[:, None, :] + self.node_offsets[None, :, :] * self.cell_widths

    def multi_index(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.resolution), -1)

    def digest(self) -> str:
        payload = json.dumps({
            "lower": self.space.lower.tolist(),
            "upper": self.space.upper.tolist(),
            "resolution": list(self.resolution),
            "cell_nodes": self.cell_nodes,
            "nu": self.nu_name,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# default quadrature nodes per axis per cell by dimension; Monte Carlo above
_DEFAULT_NODES = {1: 8, 2: 6, 3: 4}
_DEFAULT_MC_NODES = 32


def build_grid(space: StateSpace, resolution, cell_nodes: int | None = None, nu=None,
               seed: int = 0) -> Grid:
    """Product grid of cell centers with a per-cell weighting measure.

    Parameters
    ----------
    space : StateSpace
    resolution : int or sequence of int
        Cells per axis; a scalar is used on every axis.
    cell_nodes : int, optional
        Gauss-Legendre nodes per axis per cell (dimension <= 3), or the
        number of Monte Carlo nodes per cell above that.  The default
        (8, 6, 4 for dimensions 1, 2, 3 and 32 above) keeps kinks of a
        clipped drift from dominating the quadrature error.
    nu : callable, optional
        Density of the weighting measure, evaluated at (N, dim) points.  The
        default is Lebesgue measure, i.e. uniform on every cell.
    seed : int
        Seed for the Monte Carlo nodes in high dimension.
    """
    res = np.broadcast_to(np.atleast_1d(np.asarray(resolution)), (space.dim,))
    if not np.all(res == np.floor(res)) or (res < 1).any():
        raise ValueError(f"resolution must be a positive integer per axis, got {resolution}")
    if cell_nodes is None:
        cell_nodes = _DEFAULT_NODES.get(space.dim, _DEFAULT_MC_NODES)
    if cell_nodes < 1:
        raise ValueError("cell_nodes must be >= 1")
    res = tuple(int(r) for r in res)

    edges = tuple(np.linspace(space.lower[k], space.upper[k], res[k] + 1) for k in range(space.dim))
    centers = [0.5 * (e[:-1] + e[1:]) for e in edges]
    points = np.stack(np.meshgrid(*centers, indexing="ij"), -1).reshape(-1, space.dim)

    if space.dim <= _GL_MAX_DIM:
        g, w = np.polynomial.legendre.leggauss(cell_nodes)
        g = 0.5 * (g + 1.0)
        w = 0.5 * w
        offsets = np.stack(np.meshgrid(*([g] * space.dim), indexing="ij"), -1).reshape(-1, space.dim)
        base_w = np.prod(np.stack(np.meshgrid(*([w] * space.dim), indexing="ij"), -1)
                         .reshape(-1, space.dim), axis=1)
    else:
        rng = np.random.default_rng(seed)
        offsets = rng.random((cell_nodes, space.dim))
        base_w = np.full(cell_nodes, 1.0 / cell_nodes)

    n = points.shape[0]
    if nu is None:
        weights = np.broadcast_to(base_w, (n, base_w.size))
        nu_name = "uniform"
    else:
        widths = space.widths / np.asarray(res, dtype=float)
        nodes = (points - 0.5 * widths)[:, None, :] + offsets[None] * widths
        dens = np.asarray(nu(nodes.reshape(-1, space.dim)), dtype=float).reshape(n, -1)
        if (dens < 0).any():
            raise ValueError("weighting density must be nonnegative")
        mass = dens @ base_w
        if (mass <= 0).any():
            bad = int(np.flatnonzero(mass <= 0)[0])
            raise ValueError(f"weighting measure assigns zero mass to cell {bad}")
        weights = dens * base_w / mass[:, None]
        nu_name = getattr(nu, "__name__", "custom")
    return Grid(space, res, points, edges, offsets, weights, cell_nodes, nu_name)


def quantize_point(grid: Grid, x, atol: float = 1e-12):
    """Index of the nearest representative, ties going to the lower index.

    Accepts a single state or an (N, dim) array; returns an int or an int
    array accordingly.
    """
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 0 or (xa.ndim == 1 and (grid.dim > 1 or xa.size == 1))
    xs = xa.reshape(-1, grid.dim)
    if not grid.space.contains(xs, atol).all():
        raise ValueError("state outside the box")
    t = (xs - grid.space.lower) / grid.cell_widths
    idx = np.ceil(t).astype(np.int64) - 1
    idx = np.clip(idx, 0, np.asarray(grid.resolution) - 1)
    flat = np.ravel_multi_index(tuple(idx.T), grid.resolution)
    return int(flat[0]) if single else flat


# ----------------------------------------------------------------------------
# finite model

@dataclass(frozen=True, eq=False)
class FiniteCMDP:
    """Finite constrained MDP.

    Attributes
    ----------
    P : ndarray, shape (A, n, n)
        ``P[a, i, j]`` is the probability of moving from state i to j under
        action a.
    c : ndarray, shape (n, A)
    d : ndarray, shape (q, n, A)
    gamma : ndarray, shape (n,)
    k : ndarray, shape (q,)
    beta : float
    phi, lam : ndarray or None
        Quantized minorization data, shapes (n, A) and (n,).
    """

    P: np.ndarray
    c: np.ndarray
    d: np.ndarray
    gamma: np.ndarray
    k: np.ndarray
    beta: float
    phi: np.ndarray | None = None
    lam: np.ndarray | None = None
    alpha_min: float | None = None
    row_defect: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValueError("P must have shape (A, n, n)")
        A, n, _ = P.shape
        if c.shape != (n, A):
            raise ValueError(f"c must have shape {(n, A)}, got {c.shape}")
        d = np.asarray(self.d, dtype=float).reshape(-1, n, A)
        k = np.atleast_1d(np.asarray(self.k, dtype=float))
        if d.shape[0] != k.size:
            raise ValueError("one constraint level per constraint cost required")
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.shape != (n,):
            raise ValueError("gamma must have one entry per state")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"discount out of range: beta={self.beta}")
        if np.abs(P.sum(axis=2) - 1.0).max() > 1e-10 or (P < 0).any():
            raise ValueError("transition rows must be probability vectors")
        if abs(gamma.sum() - 1.0) > 1e-10 or (gamma < 0).any():
            raise ValueError("gamma must be a probability vector")
        for name, val in (("P", P), ("c", c), ("d", d), ("gamma", gamma), ("k", k)):
            object.__setattr__(self, name, val)
        if self.phi is not None:
            object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if self.lam is not None:
            object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions(self) -> int:
        return self.P.shape[0]

    @property
    def q(self) -> int:
        return self.k.size

    def with_k(self, k) -> "FiniteCMDP":
        return replace(self, k=np.atleast_1d(np.asarray(k, dtype=float)))

    def with_beta(self, beta: float) -> "FiniteCMDP":
        return replace(self, beta=float(beta))

    def expect(self, U: np.ndarray) -> np.ndarray:
        """``sum_j P[a, i, j] U[b, j]`` for a batch ``U`` (B, n): shape (B, n, A)."""
        A, n, _ = self.P.shape
        out = self.P.reshape(A * n, n) @ np.atleast_2d(U).T
        return out.reshape(A, n, -1).transpose(2, 1, 0)

    def policy_matrix(self, pi) -> np.ndarray:
        """Transition matrix under the action table ``pi`` (n, A)."""
        return np.einsum("ia,aij->ij", pi, self.P)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.P, self.c, self.d, self.gamma, self.k, np.array([self.beta])):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def save(self, path) -> None:
        """Binary artifact (little-endian float64, row-major)."""
        arrays = {
            "P": self.P, "c": self.c, "d": self.d, "gamma": self.gamma,
            "k": self.k, "beta": np.array([self.beta]),
        }
        if self.phi is not None:
            arrays["phi"] = self.phi
            arrays["lam"] = self.lam
            arrays["alpha_min"] = np.array([self.alpha_min])
        arrays = {key: np.ascontiguousarray(v, dtype="<f8") for key, v in arrays.items()}
        arrays["meta"] = np.frombuffer(json.dumps(self.meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)


def load_finite_model(path) -> FiniteCMDP:
    with np.load(Path(path)) as data:
        kw = {key: data[key] for key in ("P", "c", "d", "gamma", "k")}
        kw["beta"] = float(data["beta"][0])
        if "phi" in data:
            kw["phi"] = data["phi"]
            kw["lam"] = data["lam"]
            kw["alpha_min"] = float(data["alpha_min"][0])
        kw["meta"] = json.loads(bytes(data["meta"]).decode())
    return FiniteCMDP(**kw)


def _axis_product(factors):
    """Row-wise Kronecker product of per-axis mass arrays (N, r_k)."""
    out = factors[0]
    for f in factors[1:]:
        out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
    return out


def _cell_masses_from(model: ContinuousCMDP, z: np.ndarray, a: int, grid: Grid,
                      y_nodes: int = 4) -> np.ndarray:
    """Masses f(S_j | z, a) for every grid cell j, shape (len(z), n)."""
    tr = model.transition
    act = model.actions[a]
    if tr.separable and tr.axis_cell_mass is not None:
        return _axis_product([tr.axis_cell_mass(z, act, k, grid.axis_edges[k])
                              for k in range(grid.dim)])
    # tensor quadrature in y over every cell
    g, w = np.polynomial.legendre.leggauss(y_nodes)
    g, w = 0.5 * (g + 1), 0.5 * w
    off = np.stack(np.meshgrid(*([g] * grid.dim), indexing="ij"), -1).reshape(-1, grid.dim)
    wt = np.prod(np.stack(np.meshgrid(*([w] * grid.dim), indexing="ij"), -1)
                 .reshape(-1, grid.dim), axis=1)
    vol = float(np.prod(grid.cell_widths))
    ys = ((grid.points - 0.5 * grid.cell_widths)[:, None, :] + off[None] * grid.cell_widths)
    dens = tr.density(ys.reshape(-1, grid.dim), z, act)
    return dens.reshape(z.shape[0], grid.n, -1) @ wt * vol


def build_finite_model(model: ContinuousCMDP, grid: Grid, tol: float = 1e-6,
                       chunk: int = 4096, y_nodes: int = 4) -> FiniteCMDP:
    """Construct the finite model on ``grid``.

    ``P[a, i, j]`` is the double integral of the kernel over target cell j
    and source cell i under the weighting measure; rows are renormalized
    after quadrature and the largest pre-normalization defect is recorded
    in ``row_defect``.

    Raises
    ------
    ModelError
        If some row defect exceeds ``tol`` ("kernel quadrature too coarse").
    """
    if not (np.allclose(grid.space.lower, model.space.lower)
            and np.allclose(grid.space.upper, model.space.upper)):
        raise ValueError("grid does not cover the model's state box")
    n, A, q = grid.n, model.n_actions, model.q
    m = grid.node_offsets.shape[0]
    P = np.empty((A, n, n))
    c = np.empty((n, A))
    d = np.empty((q, n, A))
    worst = 0.0
    cells_per_chunk = max(1, chunk // m)
    for start in range(0, n, cells_per_chunk):
        idx = np.arange(start, min(n, start + cells_per_chunk))
        nodes = grid.cell_nodes_of(idx).reshape(-1, grid.dim)
        w = grid.node_weights[idx]
        for a in range(A):
            masses = _cell_masses_from(model, nodes, a, grid, y_nodes).reshape(idx.size, m, n)
            rows = np.einsum("im,imj->ij", w, masses)
            defect = np.abs(rows.sum(axis=1) - 1.0)
            worst = max(worst, float(defect.max()))
            P[a, idx] = rows / rows.sum(axis=1, keepdims=True)
            c[idx, a] = np.einsum("im,im->i", w, model.cost(nodes, a).reshape(idx.size, m))
            if q:
                dv = model.constraint_costs(nodes, a).reshape(q, idx.size, m)
                d[:, idx, a] = np.einsum("im,lim->li", w, dv)
    if worst > tol:
        raise ModelError(f"kernel quadrature too coarse: row defect {worst:.3e} > tol {tol:.1e}")
    np.clip(P, 0.0, None, out=P)
    P /= P.sum(axis=2, keepdims=True)

    gamma = _initial_masses(model, grid)
    phi = lam = None
    mino = model.regularity.minorization
    if mino is not None:
        lam = _axis_product([mino.axis_cell_mass(k, grid.axis_edges[k])[None, :]
                             for k in range(grid.dim)])[0]
        phi = np.empty((n, A))
        allnodes = grid.cell_nodes_of(np.arange(n)).reshape(-1, grid.dim)
        for a in range(A):
            vals = np.asarray(mino.phi(allnodes, model._actions_for(a, allnodes.shape[0])),
                              dtype=float)
            phi[:, a] = np.einsum("im,im->i", grid.node_weights, vals.reshape(n, m))
    meta = {
        "model": model.digest(),
        "grid": grid.digest(),
        "resolution": list(grid.resolution),
        "n": n,
    }
    return FiniteCMDP(P, c, d, gamma, model.k.copy(), model.beta, phi, lam,
                      model.regularity.alpha_min, worst, meta)


def _initial_masses(model: ContinuousCMDP, grid: Grid) -> np.ndarray:
    gam = model.costs.gamma
    if gam.axis_cell_mass is not None:
        g = _axis_product([np.asarray(gam.axis_cell_mass(k, grid.axis_edges[k]))[None, :]
                           for k in range(grid.dim)])[0]
    else:
        nodes = grid.cell_nodes_of(np.arange(grid.n)).reshape(-1, grid.dim)
        dens = np.asarray(gam.density(nodes), dtype=float).reshape(grid.n, -1)
        base = grid.node_weights if grid.nu_name == "uniform" else None
        if base is None:
            # the weighting measure is not Lebesgue; integrate with plain nodes
            plain = build_grid(grid.space, grid.resolution, grid.cell_nodes)
            nodes = plain.cell_nodes_of(np.arange(grid.n)).reshape(-1, grid.dim)
            dens = np.asarray(gam.density(nodes), dtype=float).reshape(grid.n, -1)
            base = plain.node_weights
        g = np.einsum("im,im->i", base, dens) * float(np.prod(grid.cell_widths))
    g = np.clip(g, 0.0, None)
    return g / g.sum()


# ----------------------------------------------------------------------------
# surrogate model

class Surrogate:
    """Cell-averaged surrogate model on the continuous state space.

    The kernel from ``x`` is the original kernel averaged over the cell of
    ``x`` under the weighting measure, and the costs are the finite-model
    cost tables read at the cell of ``x``.
    """

    def __init__(self, model: ContinuousCMDP, grid: Grid, fm: FiniteCMDP | None = None):
        self.model = model
        self.grid = grid
        self.fm = fm if fm is not None else build_finite_model(model, grid)

    def cell(self, x):
        return quantize_point(self.grid, np.asarray(x, dtype=float).reshape(-1, self.grid.dim))

    def b(self, x, a: int) -> np.ndarray:
        return self.fm.c[self.cell(x), a]

    def r(self, x, a: int) -> np.ndarray:
        """Constraint costs, shape (q, N)."""
        return self.fm.d[:, self.cell(x), a]

    def density(self, y, x, a: int) -> np.ndarray:
        """Surrogate kernel density q_n(y | x, a), shape (N, M)."""
        idx = self.cell(x)
        y = np.asarray(y, dtype=float).reshape(-1, self.grid.dim)
        out = np.empty((idx.size, y.shape[0]))
        for pos, i in enumerate(idx):
            nodes = self.grid.cell_nodes_of(i)[0]
            f = self.model.transition.density(y, nodes, self.model.actions[a])
            out[pos] = self.grid.node_weights[i] @ f
        return out

    def cell_masses(self, x, a: int, y_nodes: int = 6) -> np.ndarray:
        """Surrogate mass of every grid cell from ``x``, by quadrature in y."""
        g, w = np.polynomial.legendre.leggauss(y_nodes)
        g, w = 0.5 * (g + 1), 0.5 * w
        dim = self.grid.dim
        off = np.stack(np.meshgrid(*([g] * dim), indexing="ij"), -1).reshape(-1, dim)
        wt = np.prod(np.stack(np.meshgrid(*([w] * dim), indexing="ij"), -1).reshape(-1, dim), 1)
        ys = (self.grid.points - 0.5 * self.grid.cell_widths)[:, None, :] + off[None] * self.grid.cell_widths
        dens = self.density(ys.reshape(-1, dim), x, a)
        vol = float(np.prod(self.grid.cell_widths))
        return dens.reshape(dens.shape[0], self.grid.n, -1) @ wt * vol

    def sample(self, x, a_idx, rng: np.random.Generator, u_cell=None) -> np.ndarray:
        """Next states: draw z from the weighting measure on the cell of x,
        then y from the original kernel at (z, a).

        ``u_cell`` optionally supplies the uniforms used for z so that the
        draw can share random numbers with another simulation.
        """
        x = np.asarray(x, dtype=float).reshape(-1, self.grid.dim)
        idx = self.cell(x)
        if u_cell is None:
            u_cell = rng.random(x.shape)
        if self.grid.nu_name == "uniform":
            z = self.grid.cell_lower(idx) + u_cell * self.grid.cell_widths
        else:
            cum = np.cumsum(self.grid.node_weights[idx], axis=1)
            pick = (cum < u_cell[:, :1]).sum(axis=1)
            pick = np.minimum(pick, cum.shape[1] - 1)
            z = self.grid.cell_nodes_of(idx)[np.arange(idx.size), pick]
        acts = self.model.actions.actions[np.asarray(a_idx)]
        return self.model.transition.sampler(z, acts, rng)


def surrogate_evaluators(model: ContinuousCMDP, grid: Grid,
                         fm: FiniteCMDP | None = None) -> Surrogate:
    return Surrogate(model, grid, fm)
