"""Explicit approximation-rate constants, error bounds and grid thresholds.

Throughout, ``n`` is the cardinality of the grid and the covering radius is
``alpha_cov * (1/n)**(1/dim)``.  Total variation uses the L1 convention
(distance between two probability measures at most 2), matching the
Doeblin constants ``R = 2`` and ``kappa_erg = alpha_min``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RateConstants",
    "GridTooCoarse",
    "EpsCurves",
    "Y_v",
    "H_g",
    "discounted_value_bound",
    "policy_eval_bound",
    "discounted_threshold",
    "grid_threshold_discounted",
    "eps_g",
    "eps_g_closed_form",
    "average_eps_curves",
    "average_value_bound",
    "grid_threshold_average",
]


class GridTooCoarse(ValueError):
    """A bound's precondition on the grid size fails."""


@dataclass(frozen=True)
class RateConstants:
    alpha_cov: float
    dim: int
    beta: float
    q: int
    K_c: float
    K_l: tuple
    K_p: float
    G_p: float
    sup_c: float
    sup_d: tuple
    alpha_slater_min: float
    R: float = 2.0
    kappa_erg: float | None = None
    notes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        vals = [self.alpha_cov, self.K_c, self.K_p, self.G_p, self.sup_c, self.alpha_slater_min]
        if any(v is None or not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError("rate constants must be finite and nonnegative")
        if self.alpha_slater_min <= 0:
            raise ValueError("Slater slack must be positive")
        if self.kappa_erg is not None and not 0.0 < self.kappa_erg < 1.0:
            raise ValueError("kappa_erg must lie in (0, 1)")

    @classmethod
    def from_model(cls, model, alpha_cov: float | None = None, alpha_slater=None):
        """Collect declared constants of a model.

        ``alpha_cov`` defaults to the product-grid value ``|widths| / 2``.
        """
        reg = model.regularity
        missing = [key for key in ("K_c", "K_l", "K_p", "G_p") if getattr(reg, key) is None]
        if missing:
            raise ValueError(f"model does not declare {', '.join(missing)}")
        slack = alpha_slater if alpha_slater is not None else reg.alpha_slater
        if slack is None:
            raise ValueError("Slater slack not declared")
        sup_c, sup_d = model.sup_norms()
        if alpha_cov is None:
            alpha_cov = 0.5 * float(np.linalg.norm(model.space.widths))
        return cls(
            alpha_cov=float(alpha_cov), dim=model.dim, beta=model.beta, q=model.q,
            K_c=float(reg.K_c), K_l=tuple(float(v) for v in reg.K_l), K_p=float(reg.K_p),
            G_p=float(reg.G_p), sup_c=float(sup_c), sup_d=tuple(float(v) for v in sup_d),
            alpha_slater_min=float(np.min(slack)), R=2.0, kappa_erg=reg.alpha_min,
            notes=("K-tilde taken equal to K",),
        )

    @property
    def K(self) -> float:
        """Bound on the l1 norm of optimal multipliers."""
        return 2.0 * self.sup_c / self.alpha_slater_min

    @property
    def K_l_max(self) -> float:
        return max(self.K_l) if self.K_l else 0.0

    @property
    def sup_d_max(self) -> float:
        return max(self.sup_d) if self.sup_d else 0.0

    def _log_inv_kappa(self) -> float:
        if self.kappa_erg is None:
            raise ValueError("kappa_erg required for average-cost rates")
        return math.log(1.0 / self.kappa_erg)

    def I(self, sup_g: float, K_g: float):
        """``(I_1, I_2, I_3, I_4)`` for a cost with sup norm ``sup_g`` and
        Lipschitz constant ``K_g``."""
        I1 = 2.0 * sup_g * self.R
        I2 = 2.0 * K_g * self.alpha_cov
        I3 = 2.0 * sup_g * self.G_p * self.alpha_cov
        I4 = I3 / (I1 * self._log_inv_kappa()) if I1 > 0 else 0.0
        return I1, I2, I3, I4

    @property
    def I_c(self):
        return self.I(self.sup_c, self.K_c)

    def I_d(self, l: int):
        return self.I(self.sup_d[l], self.K_l[l])


def _h(n: float, dim: int) -> float:
    return (1.0 / n) ** (1.0 / dim)


def Y_v(rc: RateConstants) -> float:
    if rc.beta * rc.K_p >= 1.0:
        raise ValueError(f"need beta * K_p < 1, got {rc.beta * rc.K_p:.4f}")
    return 4.0 * rc.alpha_cov * (rc.K_c + rc.q * rc.K * rc.K_l_max) / (1.0 - rc.beta * rc.K_p)


def discounted_value_bound(n: float, rc: RateConstants) -> float:
    """``Y_v (1/n)^(1/dim)``: bound on the finite-vs-true optimal value gap."""
    return Y_v(rc) * _h(n, rc.dim)


def H_g(rc: RateConstants, K_g: float, sup_g: float) -> float:
    return (K_g + sup_g * rc.G_p / (1.0 - rc.beta)) * 2.0 * rc.alpha_cov


def policy_eval_bound(n: float, rc: RateConstants, K_g: float, sup_g: float) -> float:
    """``H_g (1/n)^(1/dim)``: finite-model versus true cost of an extended policy."""
    return H_g(rc, K_g, sup_g) * _h(n, rc.dim)


def _ceil(x: float) -> int:
    # guard against 24.000000000000004 style round-off
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else int(math.ceil(x))


def discounted_threshold(kappa: float, Yv: float, Hc: float, Hl_max: float, K: float,
                         dim: int) -> int:
    """Smallest cardinality with ``n >= max((3Yv/k)^d, (3Hc/k)^d, (3 Hl K/k)^d)``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    terms = [(3.0 * Yv / kappa) ** dim, (3.0 * Hc / kappa) ** dim, (3.0 * Hl_max * K / kappa) ** dim]
    return max(1, _ceil(max(terms)))


def grid_threshold_discounted(kappa_target: float, rc: RateConstants, H_c: float | None = None,
                              H_l_max: float | None = None):
    """Grid cardinality and tightening for a discounted accuracy target.

    Returns
    -------
    n : int
    eps : float
        ``kappa_target / (3 K)``.
    """
    if H_c is None:
        H_c = H_g(rc, rc.K_c, rc.sup_c)
    if H_l_max is None:
        H_l_max = max((H_g(rc, kl, sd) for kl, sd in zip(rc.K_l, rc.sup_d)), default=0.0)
    n = discounted_threshold(kappa_target, Y_v(rc), H_c, H_l_max, rc.K, rc.dim)
    return n, kappa_target / (3.0 * rc.K)


def _t_prime(n: float, dim: int, I4: float, log_inv_kappa: float) -> float:
    if I4 <= 0:
        return math.inf
    return math.log(n ** (1.0 / dim) / I4) / log_inv_kappa


def eps_g(n: float, rc: RateConstants, sup_g: float, K_g: float):
    """Average-cost approximation error for cost ``g`` at integer horizon.

    Evaluates ``I_1 kappa^t + I_2 h + I_3 h t`` at ``t = ceil(t')``, where
    ``t'`` is the real minimizer; ``t`` is clamped to at least 1.

    Returns
    -------
    value : float
    t_prime : float
    t : int
    clamped : bool
    """
    I1, I2, I3, I4 = rc.I(sup_g, K_g)
    h = _h(n, rc.dim)
    if I1 == 0.0:
        return I2 * h, math.inf, 1, False
    tp = _t_prime(n, rc.dim, I4, rc._log_inv_kappa())
    t = _ceil(tp)
    clamped = t < 1
    t = max(1, t)
    return I1 * rc.kappa_erg ** t + I2 * h + I3 * h * t, tp, t, clamped


def eps_g_closed_form(n: float, rc: RateConstants, sup_g: float, K_g: float) -> float:
    """Closed form ``(I_1 I_4 + I_2) h + I_3 / ln(1/kappa) h ln(n^(1/d) / I_4)``
    (the same expression evaluated at the real minimizer ``t'``)."""
    I1, I2, I3, I4 = rc.I(sup_g, K_g)
    h = _h(n, rc.dim)
    L = rc._log_inv_kappa()
    return (I1 * I4 + I2) * h + I3 / L * h * math.log(n ** (1.0 / rc.dim) / I4)


@dataclass
class EpsCurves:
    n: float
    eps_c: float
    eps_d: np.ndarray
    eps_max: float
    t_prime: float
    t: int
    clamped: bool


def average_eps_curves(n: float, rc: RateConstants) -> EpsCurves:
    ec, tp, t, clamped = eps_g(n, rc, rc.sup_c, rc.K_c)
    ed = np.array([eps_g(n, rc, sd, kl)[0] for sd, kl in zip(rc.sup_d, rc.K_l)])
    if clamped:
        warnings.warn(f"t' = {tp:.3f} <= 0 at n = {n}; horizon clamped to 1", stacklevel=2)
    return EpsCurves(n, ec, ed, float(ed.max()) if ed.size else 0.0, tp, t, clamped)


def average_value_bound(n: float, rc: RateConstants) -> float:
    """``2 eps_c + (4 |c| / alpha) eps_max``, valid once ``eps_max < alpha / 2``.

    Raises
    ------
    GridTooCoarse
        When ``eps_max(n) >= min_l alpha_l / 2``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cur = average_eps_curves(n, rc)
    if cur.eps_max >= 0.5 * rc.alpha_slater_min:
        raise GridTooCoarse(
            f"grid too coarse for average-cost bound: eps_max({n}) = {cur.eps_max:.4g} "
            f">= {0.5 * rc.alpha_slater_min:.4g}")
    return 2.0 * cur.eps_c + 4.0 * rc.sup_c / rc.alpha_slater_min * cur.eps_max


def _average_gap(n: float, kappa: float, rc: RateConstants) -> float:
    """Positive when ``kappa/3 >= 2 eps_c(n) + max(2K, 1) eps_max(n)`` holds."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cur = average_eps_curves(n, rc)
    return kappa / 3.0 - (2.0 * cur.eps_c + max(2.0 * rc.K, 1.0) * cur.eps_max)


def grid_threshold_average(kappa_target: float, rc: RateConstants, cap: int = 2 ** 62):
    """Smallest admissible cardinality by doubling then bisection.

    Returns
    -------
    n : int
    eps : float
        ``kappa_target / (3 K)``.

    Raises
    ------
    GridTooCoarse
        If no ``n <= cap`` satisfies the inequality (the message carries the
        gap at the cap).
    """
    if kappa_target <= 0:
        raise ValueError("kappa must be positive")
    hi = 1
    while _average_gap(hi, kappa_target, rc) < 0:
        if hi >= cap:
            gap = _average_gap(cap, kappa_target, rc)
            raise GridTooCoarse(f"no n <= {cap} satisfies the average-cost threshold "
                                f"(gap {gap:.4g} at the cap)")
        hi = min(2 * hi, cap)
    lo = hi // 2
    if hi == 1:
        return 1, kappa_target / (3.0 * rc.K)
    # invariant: lo fails (or is the doubling predecessor), hi satisfies
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _average_gap(mid, kappa_target, rc) >= 0:
            hi = mid
        else:
            lo = mid
    return hi, kappa_target / (3.0 * rc.K)
