"""Smoothed training objective and its analytic gradient.

The objective is the expected misclassification cost of the randomized tree,
plus concave (or polyhedral) sparsity regularizers on the branch coefficients,
plus quadratic penalties standing in for the class-coverage and minimum
correct-rate constraints.  Everything is differentiable in (a, mu, c), so the
feasible set seen by the optimizers is just boxes times simplices.

|a| is smoothed as sqrt(a^2 + s^2) - s and the per-feature maximum over branch
nodes as a rho-norm of the smoothed magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .core import EXP_CLAMP, LogisticCdf, TreeParams
from .errors import ConfigError, DataError

KINDS = ("l1", "linf", "l0exp", "appr1", "appr2", "logeps")
SCOPES = ("local", "global")


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str
    scope: str = "local"
    lam: float = 0.0
    alpha: float = 5.0
    q: float = 1.0
    eps: float = 1e-5
    smooth_abs_eps: float = 1e-8
    smooth_max_rho: float = 64.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown regularizer kind {self.kind!r}; choose from {KINDS}")
        if self.scope not in SCOPES:
            raise ConfigError(f"unknown scope {self.scope!r}; choose from {SCOPES}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        for name in ("alpha", "q", "eps", "smooth_abs_eps", "smooth_max_rho"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, doc: dict) -> RegularizerSpec:
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown regularizer keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "scope": self.scope,
            "lambda": self.lam,
            "alpha": self.alpha,
            "q": self.q,
            "eps": self.eps,
        }

    def sharpened(self, t: float) -> RegularizerSpec:
        """Less concave member of the same family; ``t = 1`` returns self.

        The exponential surrogate scales alpha by ``t``; the power and log
        surrogates divide eps by ``t``.  Convex kinds are unchanged.
        """
        if t == 1 or self.kind in ("l1", "linf"):
            return self
        if self.kind == "l0exp":
            return replace(self, alpha=self.alpha * t)
        return replace(self, eps=self.eps / t)

    def penalty(self, u: np.ndarray) -> np.ndarray:
        """Surrogate step function applied to non-negative magnitudes; 0 at u = 0."""
        if self.kind in ("l1", "linf"):
            return u
        if self.kind == "l0exp":
            return -np.expm1(-self.alpha * u)
        if self.kind == "appr1":
            return (u + self.eps) ** self.q - self.eps**self.q
        if self.kind == "appr2":
            return self.eps ** (-self.q) - (u + self.eps) ** (-self.q)
        return np.log1p(u / self.eps)

    def penalty_slope(self, u: np.ndarray) -> np.ndarray:
        if self.kind in ("l1", "linf"):
            return np.ones_like(u)
        if self.kind == "l0exp":
            return self.alpha * np.exp(-self.alpha * u)
        if self.kind == "appr1":
            return self.q * (u + self.eps) ** (self.q - 1)
        if self.kind == "appr2":
            return self.q * (u + self.eps) ** (-self.q - 1)
        return 1.0 / (u + self.eps)


@dataclass(frozen=True)
class PenaltySpec:
    coverage_weight: float = 10.0
    min_rate: float = 0.10
    min_rate_weight: float = 10.0

    def __post_init__(self):
        if self.coverage_weight < 0 or self.min_rate_weight < 0:
            raise ConfigError("penalty weights must be >= 0")
        if not 0 <= self.min_rate <= 1:
            raise ConfigError(f"min_rate must lie in [0, 1], got {self.min_rate}")

    @classmethod
    def off(cls) -> PenaltySpec:
        return cls(0.0, 0.0, 0.0)


def default_costs(n_classes: int) -> np.ndarray:
    """Unit misclassification costs of 0.5 off the diagonal."""
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    return 0.5 * (1.0 - np.eye(n_classes))


def check_costs(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ConfigError(f"cost matrix must be square, got shape {w.shape}")
    if np.any(np.diag(w) != 0) or np.any(w < 0):
        raise ConfigError("cost matrix needs a zero diagonal and non-negative entries")
    return w


def check_specs(specs) -> list[RegularizerSpec]:
    specs = list(specs or [])
    scopes = [s.scope for s in specs]
    for scope in SCOPES:
        if scopes.count(scope) > 1:
            raise ConfigError(f"more than one {scope} regularizer given")
    return specs


# -- magnitudes ------------------------------------------------------------


def smooth_abs(a: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    """sqrt(a^2 + s^2) - s and its derivative."""
    r = np.hypot(a, s)
    return r - s, a / r


def smooth_rowmax(u: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """rho-norm of each row of non-negative ``u`` and d(norm)/du."""
    top = u.max(axis=1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    ratio = u / safe
    beta = top[:, 0] * (ratio**rho).sum(axis=1) ** (1.0 / rho)
    safe_beta = np.where(beta > 0, beta, 1.0)[:, None]
    dbeta = np.where(beta[:, None] > 0, (u / safe_beta) ** (rho - 1), 0.0)
    return beta, dbeta


def reg_value(a, spec: RegularizerSpec) -> float:
    """Unweighted regularizer value (multiply by ``spec.lam`` for the objective term)."""
    return _reg_value_grad(np.asarray(a, dtype=float), spec)[0]


def _reg_on_magnitude(u: np.ndarray, spec: RegularizerSpec):
    """Regularizer of non-negative magnitudes ``u`` (p, B) and its derivative in ``u``."""
    if spec.scope == "local":
        return float(spec.penalty(u).sum()), spec.penalty_slope(u)
    beta, dbeta = smooth_rowmax(u, spec.smooth_max_rho)
    return float(spec.penalty(beta).sum()), spec.penalty_slope(beta)[:, None] * dbeta


def _reg_value_grad(a: np.ndarray, spec: RegularizerSpec):
    u, du = smooth_abs(a, spec.smooth_abs_eps)
    value, slope = _reg_on_magnitude(u, spec)
    return value, slope * du


def exact_reg_value(a, spec: RegularizerSpec) -> float:
    """Regularizer with true |a| and true row maxima (no smoothing)."""
    u = np.abs(np.asarray(a, dtype=float))
    if spec.scope == "global":
        u = u.max(axis=1)
    return float(spec.penalty(u).sum())


def sparsity_indices(a, tol: float = 1e-5) -> tuple[float, float]:
    """Local and global sparsity percentages (delta_L, delta_G) of a coefficient table."""
    zero = np.abs(np.asarray(a, dtype=float)) <= tol
    delta_local = 100.0 * zero.mean(axis=0).mean()
    delta_global = 100.0 * zero.all(axis=1).mean()
    return float(delta_local), float(delta_global)


# -- loss and gradient -----------------------------------------------------


@dataclass
class Problem:
    """Training data bound to everything the objective needs besides parameters.

    ``X`` must be scaled to [0, 1]; ``y`` holds labels 1..K.
    """

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    cdf: LogisticCdf = field(default_factory=LogisticCdf)
    specs: list = field(default_factory=list)
    pen: PenaltySpec = field(default_factory=PenaltySpec)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=int)
        self.w = check_costs(self.w)
        self.specs = check_specs(self.specs)
        K = self.w.shape[0]
        if self.y.shape != (self.X.shape[0],):
            raise DataError(f"{self.X.shape[0]} rows but {self.y.shape} labels")
        if self.y.size and (self.y.min() < 1 or self.y.max() > K):
            raise DataError(f"labels must lie in 1..{K}")
        self._wy = self.w[self.y - 1]  # (N, K) cost of predicting k for sample i
        self._onehot = np.eye(K)[self.y - 1]  # (N, K)
        self._class_count = self._onehot.sum(axis=0)

    @property
    def n_classes(self) -> int:
        return self.w.shape[0]

    def value(self, params: TreeParams) -> float:
        return self.evaluate(params, grad=False)[0]

    def value_and_grad(self, params: TreeParams):
        return self.evaluate(params, grad=True)

    def evaluate(self, params: TreeParams, grad: bool = True, loss_only: bool = False, with_reg: bool = True):
        """Objective value and, if requested, a TreeParams-shaped gradient."""
        topo = params.topology
        X, p = self.X, params.n_features
        z_raw = self.cdf.gamma * (X @ params.a / p - params.mu)
        z = np.clip(z_raw, -EXP_CLAMP, EXP_CLAMP)
        left, right = expit(z), expit(-z)
        idx, is_left = topo.ancestor_index, topo.ancestor_is_left
        factors = np.where(is_left, left[:, idx], right[:, idx])  # (N, L, D)
        P = factors.prod(axis=2)

        leaf_cost = self._wy @ params.c  # (N, L)
        value = float((P * leaf_cost).sum())
        dP = leaf_cost
        grad_c = self._wy.T @ P

        if not loss_only:
            pen = self.pen
            if pen.min_rate_weight > 0 and pen.min_rate > 0:
                mass = self._onehot.T @ P  # (K, L): sum over class-k samples of P_it
                counts = np.where(self._class_count > 0, self._class_count, 1.0)
                rate = (mass * params.c).sum(axis=1) / counts
                short = np.where(self._class_count > 0, np.maximum(0.0, pen.min_rate - rate), 0.0)
                value += pen.min_rate_weight * float((short**2).sum())
                coef = -2.0 * pen.min_rate_weight * short / counts  # d value / d rate_k, scaled
                dP = dP + (self._onehot * coef) @ params.c
                grad_c = grad_c + coef[:, None] * mass
            if pen.coverage_weight > 0:
                gap = np.maximum(0.0, 1.0 - params.c.sum(axis=1))
                value += pen.coverage_weight * float((gap**2).sum())
                grad_c = grad_c - 2.0 * pen.coverage_weight * gap[:, None]

        reg_grad = np.zeros_like(params.a)
        if with_reg and not loss_only:
            for spec in self.specs:
                if spec.lam == 0:
                    continue
                r, g = _reg_value_grad(params.a, spec)
                value += spec.lam * r
                reg_grad += spec.lam * g

        if not grad:
            return value, None

        # product rule: d P_it / d p_ib is the product of the other path factors,
        # with sign + on a left edge and - on a right edge
        D = topo.depth
        prefix = np.ones_like(factors)
        suffix = np.ones_like(factors)
        for d in range(1, D):
            prefix[:, :, d] = prefix[:, :, d - 1] * factors[:, :, d - 1]
            suffix[:, :, D - 1 - d] = suffix[:, :, D - d] * factors[:, :, D - d]
        others = prefix * suffix
        signed = np.where(is_left, others, -others) * dP[:, :, None]
        dp_left = signed.reshape(len(X), -1) @ topo.path_scatter  # (N, B)
        slope = self.cdf.gamma * left * right * (np.abs(z_raw) < EXP_CLAMP)
        dv = dp_left * slope
        grad_a = X.T @ dv / p + reg_grad
        grad_mu = -dv.sum(axis=0)
        return value, TreeParams(grad_a, grad_mu, grad_c)

    def evaluate_split(self, params: TreeParams, z: np.ndarray | None = None, grad: bool = True):
        """Objective with the regularizers applied to explicit magnitudes ``z >= |a|``.

        ``z`` defaults to ``|a|`` (no smoothing of the absolute value).  Returns
        ``(value, loss_grad, grad_z)`` where ``loss_grad.a`` excludes the
        regularizers and ``grad_z`` is their derivative in ``z``.
        """
        z = np.abs(params.a) if z is None else z
        value, g = self.evaluate(params, grad=grad, with_reg=False)
        grad_z = np.zeros_like(z)
        for spec in self.specs:
            if spec.lam == 0:
                continue
            r, gz = _reg_on_magnitude(z, spec)
            value += spec.lam * r
            grad_z += spec.lam * gz
        return value, g, grad_z

    def training_value(self, params: TreeParams) -> float:
        """Objective with true |a| in the regularizers: the quantity the solvers minimise."""
        return self.evaluate_split(params, grad=False)[0]

    def expected_loss(self, params: TreeParams) -> float:
        return self.evaluate(params, grad=False, loss_only=True)[0]

    def loss_gradient(self, params: TreeParams) -> TreeParams:
        return self.evaluate(params, grad=True, loss_only=True)[1]

    def min_rate_penalty(self, params: TreeParams) -> float:
        only = Problem(self.X, self.y, self.w, self.cdf, [], PenaltySpec(0.0, self.pen.min_rate, self.pen.min_rate_weight))
        return only.value(params) - self.expected_loss(params)


# -- functional surface ------------------------------------------------------


def expected_loss(params: TreeParams, cdf: LogisticCdf, X, y, w) -> float:
    return Problem(X, y, w, cdf, [], PenaltySpec.off()).expected_loss(params)


def objective_value(params, cdf, X, y, w, specs=(), pen: PenaltySpec | None = None) -> float:
    pen = PenaltySpec() if pen is None else pen
    return Problem(X, y, w, cdf, list(specs), pen).value(params)


def gradient(params, cdf, X, y, w, specs=(), pen: PenaltySpec | None = None) -> TreeParams:
    pen = PenaltySpec() if pen is None else pen
    return Problem(X, y, w, cdf, list(specs), pen).value_and_grad(params)[1]


def min_rate_penalty(params, cdf, X, y, pen: PenaltySpec, w=None) -> float:
    w = default_costs(params.n_classes) if w is None else w
    return Problem(X, y, w, cdf, [], pen).min_rate_penalty(params)


def xi_at_zero(cdf, X, y, w, c, mu) -> np.ndarray:
    """Partial derivatives of the expected loss w.r.t. every a_jt, taken at a = 0: (p, B)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu = np.asarray(mu, dtype=float)
    params = TreeParams(np.zeros((X.shape[1], mu.size)), mu, c)
    return Problem(X, y, w, cdf, [], PenaltySpec.off()).loss_gradient(params).a


def stationarity_threshold(cdf, X, y, w, c, mu, alpha: float) -> float:
    """Smallest lambda_L + lambda_G making a = 0 stationary for the exponential surrogate."""
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    return float(np.abs(xi_at_zero(cdf, X, y, w, c, mu)).max() / alpha)
