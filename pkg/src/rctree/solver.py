"""Multistart projected-gradient training over boxes and per-leaf simplices."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .core import LogisticCdf, TreeParams, TreeTopology, best_leaf_labels, labels_to_weights
from .errors import ConfigError, NumericalError
from .objective import Problem


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 3000
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    init_step: float = 1.0
    restarts: int = 10
    seed: int = 0
    spectral: bool = True  # Barzilai-Borwein trial step, monotone Armijo acceptance
    max_backtracks: int = 40
    max_failures: int = 50
    continuation: bool = True
    gamma_start: float | None = 1.0  # None: inverse spread of the start activations
    center_intercepts: bool = True

    def __post_init__(self):
        if self.max_iters < 0 or self.restarts < 1:
            raise ConfigError("max_iters must be >= 0 and restarts >= 1")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack < 1):
            raise ConfigError("armijo_c and backtrack must lie in (0, 1)")
        if not (self.grad_tol > 0 and self.init_step > 0):
            raise ConfigError("grad_tol and init_step must be positive")
        if self.gamma_start is not None and not self.gamma_start > 0:
            raise ConfigError("gamma_start must be positive")


@dataclass
class TrainResult:
    params: TreeParams
    objective_trace: np.ndarray
    final_objective: float
    status: str
    elapsed: float
    start_index: int = 0
    relaxed_params: TreeParams | None = None
    iterations: int = 0

    def to_dict(self, trace: bool = False) -> dict:
        from .core import params_to_dict, LogisticCdf

        doc = {
            "final_objective": self.final_objective,
            "status": self.status,
            "elapsed": self.elapsed,
            "start_index": self.start_index,
            "iterations": self.iterations,
            "params": {k: v for k, v in params_to_dict(self.params, LogisticCdf()).items() if k != "gamma"},
        }
        if trace:
            doc["objective_trace"] = self.objective_trace.tolist()
        return doc


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    A 2-D input is projected column by column.
    """
    v = np.asarray(v, dtype=float)
    cols = v.reshape(v.shape[0], -1)
    n = cols.shape[0]
    u = -np.sort(-cols, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, n + 1)[:, None]
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(cols.shape[1])] / (rho + 1)
    return np.maximum(cols - theta, 0.0).reshape(v.shape)


def project_box(v, lo, hi) -> np.ndarray:
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ConfigError("box lower bound exceeds upper bound")
    return np.clip(v, lo, hi)


class Layout:
    """Index bookkeeping for the flat variable vector [a+, a-, mu, c].

    Coefficients are split as a = a+ - a- with both parts in [0, 1]; the
    regularizers see the magnitude a+ + a-, which equals |a| whenever one part
    is zero.  The split keeps the surrogates smooth near zero and lets the
    projection set coefficients exactly to zero.
    """

    def __init__(self, n_features: int, depth: int, n_classes: int):
        self.p, self.depth, self.K = n_features, depth, n_classes
        self.B, self.L = 2**depth - 1, 2**depth
        self.n_a = self.p * self.B
        self.n_box = 2 * self.n_a + self.B
        self.size = self.n_box + self.K * self.L
        self.lo = np.concatenate([np.zeros(2 * self.n_a), -np.ones(self.B)])

    @property
    def metric(self) -> np.ndarray:
        """Step scaling: intercepts move like a coefficient on a constant feature, 1/p^2."""
        D = np.ones(self.size)
        D[2 * self.n_a : self.n_box] = 1.0 / self.p**2
        return D

    @classmethod
    def of(cls, params: TreeParams) -> Layout:
        return cls(params.n_features, params.topology.depth, params.n_classes)

    def pack(self, params: TreeParams) -> np.ndarray:
        a = params.a.ravel()
        return np.concatenate([np.maximum(a, 0.0), np.maximum(-a, 0.0), params.mu, params.c.ravel()])

    def split(self, x):
        ap = x[: self.n_a].reshape(self.p, self.B)
        am = x[self.n_a : 2 * self.n_a].reshape(self.p, self.B)
        mu = x[2 * self.n_a : self.n_box]
        c = x[self.n_box :].reshape(self.K, self.L)
        return ap, am, mu, c

    def unpack(self, x) -> TreeParams:
        ap, am, mu, c = self.split(x)
        return TreeParams(ap - am, mu.copy(), c.copy())

    def project(self, x) -> np.ndarray:
        out = np.empty_like(x)
        out[: self.n_box] = np.clip(x[: self.n_box], self.lo, 1.0)
        out[self.n_box :] = project_simplex(x[self.n_box :].reshape(self.K, self.L)).ravel()
        return out

    def objective(self, problem: Problem):
        """``x -> (value, gradient)`` of the training objective in split coordinates."""

        def fun_grad(x):
            ap, am, mu, c = self.split(x)
            value, g, gz = problem.evaluate_split(TreeParams(ap - am, mu, c), z=ap + am)
            grad = np.concatenate([(g.a + gz).ravel(), (gz - g.a).ravel(), g.mu, g.c.ravel()])
            return value, grad

        return fun_grad

    def branch_mask(self, branches) -> np.ndarray:
        """Boolean mask over x selecting a+_.t, a-_.t and mu_t for 0-based branch indices."""
        branches = np.asarray(list(branches), dtype=int)
        m = np.zeros(self.size, dtype=bool)
        a_mask = np.zeros((self.p, self.B), dtype=bool)
        a_mask[:, branches] = True
        m[: self.n_a] = a_mask.ravel()
        m[self.n_a : 2 * self.n_a] = a_mask.ravel()
        m[2 * self.n_a + branches] = True
        return m

    def leaf_mask(self, leaves) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        c_mask = np.zeros((self.K, self.L), dtype=bool)
        c_mask[:, list(leaves)] = True
        m[self.n_box :] = c_mask.ravel()
        return m


@dataclass
class LineSearchState:
    """Spectral step memory carried between calls on the same variable set."""

    prev_x: np.ndarray | None = None
    prev_g: np.ndarray | None = None


def minimize(
    fun_grad,
    x0: np.ndarray,
    project,
    cfg: SolverConfig,
    max_iters: int | None = None,
    grad_tol: float | None = None,
    free: np.ndarray | None = None,
    state: LineSearchState | None = None,
    metric: np.ndarray | None = None,
):
    """Projected gradient with Armijo backtracking along the projection arc.

    ``fun_grad(x) -> (f, g)``.  Coordinates outside ``free`` never move.
    ``metric`` is a positive diagonal scaling of the step; it must be constant
    on each non-separable block of ``project``.
    Returns ``(x, trace, status, iterations, state)``; every accepted iterate is
    feasible and ``trace`` is non-increasing.
    """
    max_iters = cfg.max_iters if max_iters is None else max_iters
    grad_tol = cfg.grad_tol if grad_tol is None else grad_tol
    state = LineSearchState() if state is None else state
    D = np.ones(len(x0)) if metric is None else np.asarray(metric, dtype=float)
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise NumericalError(f"objective is not finite at the start point ({f})")
    if free is not None:
        g = np.where(free, g, 0.0)
    trace = [f]
    status = "iter_budget"
    failures = 0
    step = 0.0
    it = 0
    while it < max_iters:
        pg = x - project(x - g)
        if free is not None:
            pg[~free] = 0.0
        if np.linalg.norm(pg) <= grad_tol:
            status = "converged"
            break
        if cfg.spectral and failures == 0 and state.prev_x is not None and state.prev_x.shape == x.shape:
            s, yv = x - state.prev_x, g - state.prev_g
            sy = float(s @ yv)
            step = float(s @ (s / D)) / sy if sy > 0 else cfg.init_step / max(1.0, float(np.abs(D * g).max()))
            step = min(max(step, 1e-12), 1e12)
        elif failures == 0:
            step = cfg.init_step / max(1.0, float(np.abs(D * g).max()))
        accepted = False
        for _ in range(cfg.max_backtracks):
            xn = project(x - step * (D * g))
            if free is not None:
                xn[~free] = x[~free]
            d = xn - x
            gd = float(g @ d)
            if not np.any(d):
                break
            fn, gn = fun_grad(xn)
            if np.isfinite(fn) and fn <= f + cfg.armijo_c * gd:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            failures += 1
            step *= cfg.backtrack
            if failures >= cfg.max_failures or not np.any(d):
                status = "step_failure" if np.any(d) else "converged"
                break
            continue
        failures = 0
        if free is not None:
            gn = np.where(free, gn, 0.0)
        state.prev_x, state.prev_g = x, g
        x, f, g = xn, fn, gn
        trace.append(f)
        it += 1
    return x, np.array(trace), status, it, state


def round_leaves(problem: Problem, params: TreeParams) -> TreeParams:
    """Replace c by the optimal integer leaf labelling for the current splits."""
    from .core import leaf_path_probs

    P = leaf_path_probs(params, problem.cdf, problem.X)
    labels = best_leaf_labels(P, problem.y, problem.w)
    return TreeParams(params.a.copy(), params.mu.copy(), labels_to_weights(labels, problem.n_classes))


SHARPEN = (0.02, 0.05, 0.1, 0.2, 0.4, 1.0)


def continuation_stages(problem: Problem, config: SolverConfig, gamma_start: float = 1.0) -> list[Problem]:
    """Sequence of problems ending with ``problem`` itself.

    Warm-up stages double the logistic slope from ``gamma_start`` up to gamma/8
    with the regularizers off; the sparsification stages then raise the slope
    to gamma while the surrogates sharpen through ``SHARPEN``.
    """
    gamma = problem.cdf.gamma
    if not config.continuation:
        return [problem]
    stages = []
    g = gamma_start
    while g <= gamma / 8:
        stages.append(replace(problem, cdf=LogisticCdf(g), specs=[]))
        g *= 2
    for i, t in enumerate(SHARPEN[:-1]):
        g = min(gamma, gamma / 4 * 2**i)
        stages.append(replace(problem, cdf=LogisticCdf(g), specs=[s.sharpened(t) for s in problem.specs]))
    stages.append(problem)
    return stages


def train(
    problem: Problem,
    topology: TreeTopology,
    config: SolverConfig,
    start: TreeParams,
    start_index: int = 0,
) -> TrainResult:
    """Projected-gradient training from ``start`` (projected onto the feasible set).

    With ``config.continuation`` the iteration budget is split evenly over
    :func:`continuation_stages`; the returned trace belongs to the final stage,
    which is the requested problem.
    """
    t0 = time.perf_counter()
    layout = Layout(start.n_features, topology.depth, start.n_classes)
    x = layout.project(layout.pack(start))
    gamma_start = config.gamma_start
    if config.continuation:
        act = problem.X @ layout.unpack(x).a / layout.p
        if config.center_intercepts:
            x[2 * layout.n_a : layout.n_box] = np.clip(np.median(act, axis=0), -1.0, 1.0)
        if gamma_start is None:
            spread = float(np.median(act.std(axis=0)))
            gamma_start = 1.0 / spread if spread > 0 else 1.0
    stages = continuation_stages(problem, config, gamma_start or 1.0)
    budget = max(1, config.max_iters // len(stages)) if config.max_iters else 0
    iters = 0
    frozen_c = ~layout.leaf_mask(range(layout.L))
    for k, stage in enumerate(stages):
        last = k == len(stages) - 1
        n = config.max_iters - budget * (len(stages) - 1) if last else budget
        free = None
        if not last and not stage.specs:
            # warm-up: hold c at integer labels so that leaves stay distinct
            x[layout.n_box :] = round_leaves(stage, layout.unpack(x)).c.ravel()
            free = frozen_c
        x, trace, status, it, _ = minimize(
            layout.objective(stage), x, layout.project, config, max_iters=n, free=free, metric=layout.metric
        )
        iters += it
    relaxed = layout.unpack(x)
    rounded = round_leaves(problem, relaxed)
    return TrainResult(
        params=rounded,
        objective_trace=trace,
        final_objective=problem.training_value(rounded),
        status=status,
        elapsed=time.perf_counter() - t0,
        start_index=start_index,
        relaxed_params=relaxed,
        iterations=iters,
    )


def random_start(n_features: int, depth: int, n_classes: int, seed: int, start_index: int) -> TreeParams:
    """Start drawn from seed (seed, start_index): boxes uniform, leaf columns softmax of uniforms."""
    rng = np.random.default_rng([int(seed) % 2**63, int(start_index)])
    nb = 2**depth - 1
    a = rng.uniform(-1.0, 1.0, size=(n_features, nb))
    mu = rng.uniform(-1.0, 1.0, size=nb)
    e = np.exp(rng.uniform(size=(n_classes, nb + 1)))
    return TreeParams(a, mu, e / e.sum(axis=0))


def multistart_train(
    problem: Problem,
    topology: TreeTopology,
    config: SolverConfig,
    starts: list[TreeParams] | None = None,
) -> tuple[TrainResult, list[TrainResult]]:
    """Train from ``config.restarts`` random starts (or the given ones); best has lowest objective."""
    p = problem.X.shape[1]
    if starts is None:
        starts = [
            random_start(p, topology.depth, problem.n_classes, config.seed, i)
            for i in range(config.restarts)
        ]
    results = [train(problem, topology, config, s, start_index=i) for i, s in enumerate(starts)]
    best = min(results, key=lambda r: (r.final_objective, r.start_index))
    return best, results


def with_budget(config: SolverConfig, max_iters: int) -> SolverConfig:
    return replace(config, max_iters=max_iters)
