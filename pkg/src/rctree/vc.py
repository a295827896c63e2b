"""VC-dimension bounds for maximal randomized classification trees.

Lower bounds are exact closed forms valid under stated conditions; the upper
bound is an order-of-magnitude witness 2^(4(D-1)) p^2 and is never compared
numerically with the lower bounds.

The shattering construction places the points V_R = {0, e_1, ..., e_p} on one
side and V_L = {1, 1 - e_1, ..., 1 - e_p} on the other of a single soft split
with coefficients (p-1)/p and intercept 1/p.  V_L points must route left with
probability at least 1 - eps and V_R points right with probability at least
1 - eps; ``gamma_min`` is the smallest slope achieving this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError


@dataclass(frozen=True)
class VcQuery:
    p: int
    D: int

    def __post_init__(self):
        if int(self.p) != self.p or int(self.D) != self.D or self.p < 1 or self.D < 1:
            raise ConfigError(f"p and D must be positive integers, got p={self.p}, D={self.D}")


@dataclass(frozen=True)
class LowerBound:
    """``value`` is the bound, or None with ``violated`` naming the failed condition."""

    value: int | None
    violated: str | None = None
    conditions: tuple = ()

    @property
    def holds(self) -> bool:
        return self.value is not None


def vc_lower(q: VcQuery) -> LowerBound:
    """Lower bound on the VC dimension of a maximal depth-D tree on p inputs.

    Examples
    --------
    >>> vc_lower(VcQuery(4, 2)).value
    10
    >>> vc_lower(VcQuery(4, 8)).violated
    'D <= p+2'
    """
    p, D = q.p, q.D
    if D == 1:
        return LowerBound(p + 1)
    if D == 2:
        return LowerBound(2 * (p + 1))
    conds = ("D <= p+2", "p-D <= 2^(p-D+1)-3")
    if D > p + 2:
        return LowerBound(None, conds[0], conds)
    if p - D > 2 ** (p - D + 1) - 3:
        return LowerBound(None, conds[1], conds)
    return LowerBound(2 ** (D - 1) * (p - D + 3), None, conds)


def vc_upper_witness(q: VcQuery) -> int:
    """Order-bound witness 2^(4(D-1)) * p^2 (a big-O constant-free expression, not a count)."""
    return 2 ** (4 * (q.D - 1)) * q.p**2


def _check_construction(p: int, eps: float) -> int:
    if int(p) != p:
        raise ConfigError(f"p must be an integer, got {p}")
    p = int(p)
    if p * p - 3 * p + 1 <= 0:
        raise ConfigError(f"construction inapplicable for p={p}: p^2 - 3p + 1 must be positive (p >= 3)")
    if not 0 < eps < 0.5:
        raise ConfigError(f"eps must lie in (0, 0.5), got {eps}")
    return p


@dataclass(frozen=True)
class ShatterConstruction:
    a: np.ndarray
    mu: float
    gamma_min: float


def shatter_construction(p: int, eps: float) -> ShatterConstruction:
    """Split parameters separating V_L from V_R and the minimal slope for error ``eps``.

    Examples
    --------
    >>> round(shatter_construction(4, 0.05).gamma_min, 4)
    47.111
    """
    p = _check_construction(p, eps)
    log_odds = math.log((1 - eps) / eps)
    gamma_min = max(p * p * log_odds, p * p / (p * p - 3 * p + 1) * log_odds)
    return ShatterConstruction(np.full(p, (p - 1) / p), 1.0 / p, gamma_min)


@dataclass(frozen=True)
class Separation:
    ok: bool
    worst_right_set: float  # largest probability of a V_R point going left
    worst_left_set: float  # largest probability of a V_L point going right


def shatter_points(p: int) -> tuple[np.ndarray, np.ndarray]:
    """(V_R, V_L) as row arrays of p+1 points each."""
    eye = np.eye(p)
    v_r = np.vstack([np.zeros(p), eye])
    v_l = np.vstack([np.ones(p), 1.0 - eye])
    return v_r, v_l


def verify_separation(p: int, eps: float, gamma: float, rtol: float = 1e-12) -> Separation:
    """Check every construction point routes to its side with probability >= 1 - eps.

    ``rtol`` absorbs floating-point rounding so that ``gamma_min`` itself passes.
    """
    p = _check_construction(p, eps)
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    c = shatter_construction(p, eps)
    v_r, v_l = shatter_points(p)
    z_r = gamma * (v_r @ c.a / p - c.mu)
    z_l = gamma * (v_l @ c.a / p - c.mu)
    worst_r = float(np.max(expit(z_r)))
    worst_l = float(np.max(expit(-z_l)))
    bound = eps * (1 + rtol)
    return Separation(worst_r <= bound and worst_l <= bound, worst_r, worst_l)
