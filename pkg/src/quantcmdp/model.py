"""Continuous-state constrained MDPs on a box with a finite action grid.

A :class:`ContinuousCMDP` bundles

* the state box and the action grid,
* a transition density ``f(y | x, a)`` (with a seeded sampler and, when
  available, a closed-form integrator over axis-aligned boxes),
* the one-stage cost ``c``, the constraint costs ``d_l``, the constraint
  levels ``k``, the discount factor and the initial law,
* optional regularity data (Lipschitz constants, kernel moduli, minorization
  data, Slater slack) used by the rate computations.

Evaluator conventions: states are arrays of shape ``(N, dim)`` and actions are
arrays of shape ``(N, action_dim)`` (or a single action broadcast over all
rows).  Cost evaluators return shape ``(N,)``.
"""

from __future__ import annotations

import hashlib
import importlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ModelError",
    "StateSpace",
    "ActionGrid",
    "TransitionSpec",
    "InitialDistribution",
    "CostSpec",
    "MinorizationData",
    "RegularityData",
    "ContinuousCMDP",
    "TruncatedGaussianNoise",
    "CheckResult",
    "ValidationReport",
    "make_additive_noise",
    "validate_model",
    "estimate_kernel_moduli",
    "register_family",
    "model_from_spec",
    "load_model",
    "save_model",
]


class ModelError(ValueError):
    """Malformed model data (hard error, as opposed to an assumption warning)."""


def _as_states(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 else x.reshape(-1, 1)
    return x


@dataclass(frozen=True)
class StateSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ModelError("malformed box: lower/upper must be 1-D of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ModelError("malformed box: bounds must be finite")
        if not (lo < hi).all():
            raise ModelError("malformed box: need lower < upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, x, atol: float = 1e-12) -> np.ndarray:
        x = _as_states(x, self.dim)
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=1)

    def uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lower + rng.random((size, self.dim)) * self.widths


@dataclass(frozen=True)
class ActionGrid:
    actions: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] == 0:
            raise ModelError("action grid must be a nonempty list of points")
        if np.unique(a, axis=0).shape[0] != a.shape[0]:
            raise ModelError("action grid contains duplicate actions")
        object.__setattr__(self, "actions", a)

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def dim(self) -> int:
        return self.actions.shape[1]

    def __getitem__(self, idx):
        return self.actions[idx]


class TruncatedGaussianNoise:
    """Independent Gaussian noise per axis, truncated and renormalized to the box.

    Adding this noise to a drift point ``m`` gives the product density
    ``prod_k phi((y_k - m_k)/s_k) / (s_k Z_k(m_k))`` on the box, where
    ``Z_k`` is the Gaussian mass of the box's k-th side.
    """

    def __init__(self, sigma, space: StateSpace):
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (space.dim,)).copy()
        if not (np.isfinite(sigma).all() and (sigma > 0).all()):
            raise ModelError("noise has no density: standard deviations must be positive")
        self.sigma = sigma
        self.space = space

    def _std(self, v, m, k):
        return (v - m) / self.sigma[k]

    def _normaliser(self, m, k):
        lo = special.ndtr(self._std(self.space.lower[k], m, k))
        hi = special.ndtr(self._std(self.space.upper[k], m, k))
        return lo, hi - lo

    def density(self, y: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Density at ``y`` (M, dim) for drift points ``m`` (N, dim) -> (N, M)."""
        out = np.ones((m.shape[0], y.shape[0]))
        for k in range(self.space.dim):
            _, z = self._normaliser(m[:, k], k)
            u = (y[None, :, k] - m[:, None, k]) / self.sigma[k]
            out *= np.exp(-0.5 * u**2) / (math.sqrt(2 * math.pi) * self.sigma[k] * z[:, None])
        return out

    def axis_cell_mass(self, m: np.ndarray, k: int, edges: np.ndarray) -> np.ndarray:
        """Mass of the intervals between consecutive ``edges`` on axis ``k``."""
        base, z = self._normaliser(m[:, k], k)
        cdf = special.ndtr((edges[None, :] - m[:, None, k]) / self.sigma[k])
        mass = np.diff(cdf, axis=1) / z[:, None]
        return np.clip(mass, 0.0, None)

    def sample_uniform(self, m: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF draw from uniforms ``u`` (N, dim)."""
        out = np.empty_like(m)
        for k in range(self.space.dim):
            lo, z = self._normaliser(m[:, k], k)
            p = np.clip(lo + u[:, k] * z, 1e-300, 1 - 1e-16)
            y = m[:, k] + self.sigma[k] * special.ndtri(p)
            out[:, k] = np.clip(y, self.space.lower[k], self.space.upper[k])
        return out

    def sample(self, m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.sample_uniform(m, rng.random(m.shape))


@dataclass(frozen=True)
class TransitionSpec:
    """Transition kernel given by a density on the state box.

    ``density(y, x, a)`` -> (N, M) for states ``x`` (N, dim), one action
    ``a`` (action_dim,) and evaluation points ``y`` (M, dim).
    ``sampler(x, a, rng)`` -> (N, dim) with ``a`` of shape (N, action_dim).
    ``axis_cell_mass(x, a, k, edges)`` is an optional closed-form integrator
    for product kernels; ``separable`` marks that the kernel factorizes over
    axes so cell masses are products of axis masses.
    """

    density: Callable
    sampler: Callable
    axis_cell_mass: Callable | None = None
    separable: bool = False


@dataclass(frozen=True)
class InitialDistribution:
    density: Callable
    sampler: Callable
    axis_cell_mass: Callable | None = None


@dataclass(frozen=True)
class CostSpec:
    c: Callable
    d: tuple
    k: np.ndarray
    beta: float
    gamma: InitialDistribution
    sup_c: float | None = None
    sup_d: tuple | None = None

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.k, dtype=float))
        if len(self.d) != k.size:
            raise ModelError("one constraint level per constraint cost required")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "d", tuple(self.d))

    @property
    def q(self) -> int:
        return len(self.d)


@dataclass(frozen=True)
class MinorizationData:
    """Product measure ``lambda`` with piecewise-constant axis densities.

    ``axis_edges[k]`` are bin edges on axis k and ``axis_weights[k]`` the
    probability of each bin, so ``lambda`` is uniform inside every product
    bin.  ``phi(x, a)`` returns the minorizing coefficient and
    ``alpha_min`` the constant with ``phi >= 1 - alpha_min``.
    """

    axis_edges: tuple
    axis_weights: tuple
    phi: Callable
    alpha_min: float

    def axis_cell_mass(self, k: int, edges: np.ndarray) -> np.ndarray:
        """lambda-mass of the intervals between ``edges`` on axis ``k``."""
        e, w = self.axis_edges[k], self.axis_weights[k]
        cum = np.concatenate([[0.0], np.cumsum(w)])
        # piecewise-linear CDF of a piecewise-constant density
        cdf = np.interp(edges, e, cum)
        return np.diff(cdf)

    def density(self, y: np.ndarray) -> np.ndarray:
        out = np.ones(y.shape[0])
        for k in range(len(self.axis_edges)):
            e, w = self.axis_edges[k], self.axis_weights[k]
            idx = np.clip(np.searchsorted(e, y[:, k], side="right") - 1, 0, w.size - 1)
            out *= w[idx] / np.diff(e)[idx]
        return out


@dataclass(frozen=True)
class RegularityData:
    K_c: float | None = None
    K_l: tuple | None = None
    K_p: float | None = None
    G_p: float | None = None
    minorization: MinorizationData | None = None
    alpha_slater: tuple | None = None
    witness_policy: Callable | None = None

    @property
    def alpha_min(self) -> float | None:
        return None if self.minorization is None else self.minorization.alpha_min


@dataclass(frozen=True, eq=False)
class ContinuousCMDP:
    space: StateSpace
    actions: ActionGrid
    transition: TransitionSpec
    costs: CostSpec
    regularity: RegularityData = field(default_factory=RegularityData)
    name: str = "model"
    spec: dict | None = None

    def __post_init__(self):
        if not 0.0 < self.costs.beta < 1.0:
            raise ModelError(f"discount out of range: beta={self.costs.beta}")
        if (self.costs.k <= 0).any():
            raise ModelError("constraint levels k must be positive")

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def q(self) -> int:
        return self.costs.q

    @property
    def beta(self) -> float:
        return self.costs.beta

    @property
    def k(self) -> np.ndarray:
        return self.costs.k

    def digest(self) -> str:
        if self.spec is not None:
            payload = json.dumps(self.spec, sort_keys=True, separators=(",", ":"))
        else:
            payload = f"{self.name}:{id(self)}"
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def cost(self, x, a_idx) -> np.ndarray:
        x = _as_states(x, self.dim)
        a = self._actions_for(a_idx, x.shape[0])
        return np.asarray(self.costs.c(x, a), dtype=float)

    def constraint_costs(self, x, a_idx) -> np.ndarray:
        """Shape (q, N)."""
        x = _as_states(x, self.dim)
        a = self._actions_for(a_idx, x.shape[0])
        if self.q == 0:
            return np.zeros((0, x.shape[0]))
        return np.stack([np.asarray(d(x, a), dtype=float) for d in self.costs.d])

    def _actions_for(self, a_idx, n):
        a_idx = np.asarray(a_idx)
        if a_idx.ndim == 0:
            return np.broadcast_to(self.actions.actions[int(a_idx)], (n, self.actions.dim))
        return self.actions.actions[a_idx]

    def with_constraints(self, k) -> "ContinuousCMDP":
        from dataclasses import replace

        costs = replace(self.costs, k=np.asarray(k, dtype=float))
        return replace(self, costs=costs)

    def sup_norms(self, nodes: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        """Declared sup-norms of c and d_l, else maxima over ``nodes`` x actions."""
        sup_c, sup_d = self.costs.sup_c, self.costs.sup_d
        if sup_c is None or (sup_d is None and self.q):
            if nodes is None:
                rng = np.random.default_rng(0)
                nodes = self.space.uniform(rng, 4096)
            cs = [self.cost(nodes, a) for a in range(self.n_actions)]
            ds = [self.constraint_costs(nodes, a) for a in range(self.n_actions)]
            if sup_c is None:
                sup_c = float(np.max(np.abs(cs)))
            if sup_d is None and self.q:
                sup_d = tuple(float(v) for v in np.max(np.abs(np.stack(ds, 0)), axis=(0, 2)))
        return float(sup_c), np.asarray(sup_d if sup_d is not None else (), dtype=float)


def make_additive_noise(
    space: StateSpace,
    actions: ActionGrid,
    H: Callable,
    noise: TruncatedGaussianNoise,
    costs: CostSpec,
    regularity: RegularityData | None = None,
    name: str = "additive",
    spec: dict | None = None,
) -> ContinuousCMDP:
    """Additive-noise dynamics ``x' = H(x, a) + v`` renormalized to the box.

    ``H(x, a)`` maps (N, dim) states and (N, action_dim) actions to drift
    points, which are clipped into the box.  Noise must be strictly positive
    with a density (``TruncatedGaussianNoise`` rejects zero variance).
    """
    if not isinstance(noise, TruncatedGaussianNoise):
        raise ModelError("noise must provide a density (TruncatedGaussianNoise)")

    def drift(x, a):
        a = np.broadcast_to(np.asarray(a, dtype=float), (x.shape[0], actions.dim))
        m = np.asarray(H(x, a), dtype=float).reshape(x.shape[0], space.dim)
        return np.clip(m, space.lower, space.upper)

    def density(y, x, a):
        return noise.density(_as_states(y, space.dim), drift(_as_states(x, space.dim), a))

    def sampler(x, a, rng):
        return noise.sample(drift(x, a), rng)

    def axis_mass(x, a, k, edges):
        return noise.axis_cell_mass(drift(_as_states(x, space.dim), a), k, edges)

    transition = TransitionSpec(density, sampler, axis_mass, separable=True)
    model = ContinuousCMDP(
        space, actions, transition, costs, regularity or RegularityData(), name, spec
    )
    object.__setattr__(model, "drift", drift)
    object.__setattr__(model, "noise", noise)
    return model


# ----------------------------------------------------------------------------
# validation

@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "unchecked"
    detail: str = ""
    evidence: dict = field(default_factory=dict)


@dataclass
class ValidationReport:
    checks: list

    def __getitem__(self, name: str) -> CheckResult:
        for chk in self.checks:
            if chk.name == name:
                return chk
        raise KeyError(name)

    @property
    def ok(self) -> bool:
        return all(chk.status != "fail" for chk in self.checks)

    @property
    def warnings(self) -> list:
        return [chk for chk in self.checks if chk.status == "fail"]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "status": c.status, "detail": c.detail, "evidence": c.evidence}
                for c in self.checks
            ],
        }


def _gauss_nodes(space: StateSpace, per_axis: int, cells: int = 1):
    """Tensor Gauss-Legendre nodes over the box split into ``cells`` per axis."""
    g, w = np.polynomial.legendre.leggauss(per_axis)
    axes, weights = [], []
    for k in range(space.dim):
        edges = np.linspace(space.lower[k], space.upper[k], cells + 1)
        h = np.diff(edges)
        pts = (edges[:-1, None] + (g[None, :] + 1) * 0.5 * h[:, None]).ravel()
        wts = (w[None, :] * 0.5 * h[:, None]).ravel()
        axes.append(pts)
        weights.append(wts)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, space.dim)
    wmesh = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), -1).reshape(-1, space.dim), 1)
    return mesh, wmesh


def _total_mass(model: ContinuousCMDP, x: np.ndarray, a: int, resolution: int = 64):
    """Integral of f(. | x, a) over the box, shape (N,)."""
    tr = model.transition
    if tr.axis_cell_mass is not None and tr.separable:
        out = np.ones(x.shape[0])
        for k in range(model.dim):
            edges = np.array([model.space.lower[k], model.space.upper[k]])
            out *= tr.axis_cell_mass(x, model.actions[a], k, edges)[:, 0]
        return out
    nodes, w = _gauss_nodes(model.space, 8, resolution if model.dim == 1 else 8)
    return tr.density(nodes, x, model.actions[a]) @ w


def _tv_distance(model, x, xp, a, resolution=256):
    """L1 distance between f(.|x,a) and f(.|x',a) by quadrature, shape (N,)."""
    nodes, w = _gauss_nodes(model.space, 6, resolution if model.dim == 1 else 12)
    fa = model.transition.density(nodes, x, model.actions[a])
    fb = model.transition.density(nodes, xp, model.actions[a])
    return np.abs(fa - fb) @ w


def _w1_lower(model, x, xp, a, resolution=256):
    """Exact W1 in one dimension; difference of means (a lower bound) otherwise."""
    nodes, w = _gauss_nodes(model.space, 6, resolution if model.dim == 1 else 12)
    fa = model.transition.density(nodes, x, model.actions[a]) * w
    fb = model.transition.density(nodes, xp, model.actions[a]) * w
    if model.dim == 1:
        order = np.argsort(nodes[:, 0])
        ys = nodes[order, 0]
        cdf_gap = np.cumsum(fa[:, order] - fb[:, order], axis=1)
        dy = np.diff(np.concatenate([ys, [model.space.upper[0]]]))
        return np.abs(cdf_gap) @ dy
    return np.linalg.norm(fa @ nodes - fb @ nodes, axis=1)


def estimate_kernel_moduli(model: ContinuousCMDP, seed: int = 0, n_pairs: int = 64):
    """Sampled ratio estimates (lower bounds) of K_c, K_l, K_p and G_p."""
    rng = np.random.default_rng(seed)
    x = model.space.uniform(rng, n_pairs)
    step = rng.normal(size=x.shape)
    step *= (0.05 * model.space.widths.min()) / np.linalg.norm(step, axis=1, keepdims=True)
    xp = np.clip(x + step, model.space.lower, model.space.upper)
    dist = np.linalg.norm(x - xp, axis=1)
    ok = dist > 1e-12
    x, xp, dist = x[ok], xp[ok], dist[ok]
    est = {"K_c": 0.0, "K_l": np.zeros(model.q), "K_p": 0.0, "G_p": 0.0}
    for a in range(model.n_actions):
        est["K_c"] = max(est["K_c"], float(np.max(np.abs(model.cost(x, a) - model.cost(xp, a)) / dist)))
        if model.q:
            dd = np.abs(model.constraint_costs(x, a) - model.constraint_costs(xp, a)) / dist
            est["K_l"] = np.maximum(est["K_l"], dd.max(axis=1))
        est["G_p"] = max(est["G_p"], float(np.max(_tv_distance(model, x, xp, a) / dist)))
        est["K_p"] = max(est["K_p"], float(np.max(_w1_lower(model, x, xp, a) / dist)))
    est["K_l"] = tuple(float(v) for v in est["K_l"])
    return est


def validate_model(model: ContinuousCMDP, tol: float = 1e-6, seed: int = 0,
                   n_samples: int = 64) -> ValidationReport:
    """Numerically check the standing assumptions where the data permits.

    Hard errors (malformed box, nonpositive ``k``, discount outside (0, 1))
    raise :class:`ModelError`; assumption failures are reported as ``fail``.
    """
    if not 0.0 < model.beta < 1.0:
        raise ModelError(f"discount out of range: beta={model.beta}")
    if (model.k <= 0).any():
        raise ModelError("constraint levels k must be positive")
    StateSpace(model.space.lower, model.space.upper)

    rng = np.random.default_rng(seed)
    xs = model.space.uniform(rng, n_samples)
    checks = []

    resid = max(float(np.max(np.abs(_total_mass(model, xs, a) - 1.0)))
                for a in range(model.n_actions))
    checks.append(CheckResult(
        "density_normalization", "pass" if resid <= tol else "fail",
        f"max |integral f - 1| = {resid:.3e}", {"max_residual": resid}))

    cmin = min(float(model.cost(xs, a).min()) for a in range(model.n_actions))
    dmin = min((float(model.constraint_costs(xs, a).min()) for a in range(model.n_actions)),
               default=0.0)
    checks.append(CheckResult(
        "nonnegative_costs", "pass" if min(cmin, dmin) >= -tol else "fail",
        f"min c = {cmin:.3e}, min d = {dmin:.3e}", {"min_c": cmin, "min_d": dmin}))

    reg = model.regularity
    mino = reg.minorization
    if mino is None:
        checks.append(CheckResult("minorization", "unchecked", "no minorization data"))
    else:
        worst_phi = np.inf
        worst_gap = np.inf
        for a in range(model.n_actions):
            phi = np.asarray(mino.phi(xs, model._actions_for(a, xs.shape[0])), dtype=float)
            worst_phi = min(worst_phi, float(phi.min()))
            # compare on the lambda bins of every axis (product cells)
            cell = _product_cell_masses(model, xs, a, [np.asarray(e) for e in mino.axis_edges])
            lam = _product_lambda(mino)
            gap = cell - lam[None, :] * phi[:, None]
            worst_gap = min(worst_gap, float(gap.min()))
        ok_phi = worst_phi >= 1.0 - mino.alpha_min - tol
        ok_min = worst_gap >= -tol
        status = "pass" if ok_phi and ok_min else "fail"
        detail = (f"min phi = {worst_phi:.4f} vs 1 - alpha_min = {1 - mino.alpha_min:.4f}; "
                  f"min cell slack = {worst_gap:.3e}")
        checks.append(CheckResult("minorization", status, detail,
                                  {"min_phi": worst_phi, "min_cell_slack": worst_gap}))

    declared = {"K_c": reg.K_c, "K_l": reg.K_l, "K_p": reg.K_p, "G_p": reg.G_p}
    if all(v is None for v in declared.values()):
        checks.append(CheckResult("lipschitz", "unchecked", "no constants declared"))
    else:
        est = estimate_kernel_moduli(model, seed=seed, n_pairs=n_samples)
        bad = []
        slack = 1e-3
        for key in ("K_c", "K_p", "G_p"):
            if declared[key] is not None and est[key] > declared[key] * (1 + slack) + tol:
                bad.append(key)
        if declared["K_l"] is not None:
            for l, (e, dcl) in enumerate(zip(est["K_l"], declared["K_l"])):
                if e > dcl * (1 + slack) + tol:
                    bad.append(f"K_l[{l}]")
        checks.append(CheckResult(
            "lipschitz", "fail" if bad else "pass",
            "sampled ratios exceed declared: " + ", ".join(bad) if bad else "sampled ratios within declared constants",
            {"estimates": est}))
        if reg.K_p is not None:
            contraction = reg.K_p * model.beta
            checks.append(CheckResult(
                "wasserstein_contraction", "pass" if contraction < 1 else "fail",
                f"K_p * beta = {contraction:.4f}", {"K_p_beta": contraction}))

    if reg.alpha_slater is None:
        checks.append(CheckResult("slater", "unchecked", "no Slater slack declared"))
    else:
        al = np.asarray(reg.alpha_slater, dtype=float)
        checks.append(CheckResult(
            "slater", "pass" if (al > 0).all() and al.size == model.q else "fail",
            f"declared slack {al.tolist()}", {"alpha_slater": al.tolist()}))
    return ValidationReport(checks)


def _product_cell_masses(model, x, a, axis_edges):
    tr = model.transition
    if tr.axis_cell_mass is not None and tr.separable:
        out = None
        for k, edges in enumerate(axis_edges):
            mk = tr.axis_cell_mass(x, model.actions[a], k, edges)
            out = mk if out is None else (out[:, :, None] * mk[:, None, :]).reshape(x.shape[0], -1)
        return out
    # quadrature in y over every product cell
    g, w = np.polynomial.legendre.leggauss(4)
    cells = np.stack(np.meshgrid(*[np.arange(e.size - 1) for e in axis_edges], indexing="ij"),
                     -1).reshape(-1, len(axis_edges))
    out = np.empty((x.shape[0], cells.shape[0]))
    for ci, idx in enumerate(cells):
        lo = np.array([axis_edges[k][i] for k, i in enumerate(idx)])
        hi = np.array([axis_edges[k][i + 1] for k, i in enumerate(idx)])
        sub = StateSpace(lo, hi)
        nodes, wts = _gauss_nodes(sub, 4)
        out[:, ci] = tr.density(nodes, x, model.actions[a]) @ wts
    return out


def _product_lambda(mino: MinorizationData) -> np.ndarray:
    out = np.ones(1)
    for w in mino.axis_weights:
        out = (out[:, None] * np.asarray(w)[None, :]).ravel()
    return out


# ----------------------------------------------------------------------------
# model description files

_FAMILIES: dict[str, Callable] = {}


def register_family(name: str):
    def deco(fn):
        _FAMILIES[name] = fn
        return fn
    return deco


def _canonical(spec: dict) -> dict:
    spec = json.loads(json.dumps(spec, sort_keys=True))
    spec.setdefault("params", {})
    return spec


def model_from_spec(spec: dict) -> ContinuousCMDP:
    """Build a model from ``{"family": name, "params": {...}}`` or
    ``{"plugin": "module:factory", "params": {...}}``."""
    from . import families  # noqa: F401  registers the builtin families

    spec = _canonical(spec)
    params = spec.get("params", {})
    if "family" in spec:
        try:
            factory = _FAMILIES[spec["family"]]
        except KeyError:
            raise ModelError(f"unknown model family {spec['family']!r}") from None
    elif "plugin" in spec:
        mod, _, attr = spec["plugin"].partition(":")
        factory = getattr(importlib.import_module(mod), attr)
    else:
        raise ModelError("model spec needs a 'family' or 'plugin' entry")
    model = factory(**params)
    object.__setattr__(model, "spec", spec)
    return model


def load_model(path) -> ContinuousCMDP:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:  # pragma: no cover - python < 3.11
            import tomli as tomllib
        spec = tomllib.loads(text)
    else:
        spec = json.loads(text)
    return model_from_spec(spec)


def save_model(model: ContinuousCMDP, path) -> None:
    if model.spec is None:
        raise ModelError("model was not built from a spec dict and cannot be saved")
    Path(path).write_text(json.dumps(model.spec, sort_keys=True, indent=2) + "\n")
