"""Node-based proximal decomposition of the training problem.

A decomposition step frees the variables of a working set of nodes (the
coefficient column and intercept of each selected branch node, the class
weights of each selected leaf), minimises the training objective plus a
proximal term over them for a few projected-gradient iterations, and copies
the result back.  Every step is a descent step, so the objective recorded
after each merge never increases.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import TreeParams, TreeTopology
from .errors import ConfigError, StructuralError
from .objective import Problem
from .solver import Layout, LineSearchState, SolverConfig, TrainResult, minimize, round_leaves, train

VARIANTS = ("S-NB-DEC", "C-NB-DEC")


@dataclass(frozen=True)
class WorkingSet:
    """Branch ids (1..2^D-1) and leaf ids (2^D..2^(D+1)-1) whose variables are free."""

    branch: frozenset = frozenset()
    leaf: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "branch", frozenset(int(t) for t in self.branch))
        object.__setattr__(self, "leaf", frozenset(int(t) for t in self.leaf))

    @classmethod
    def full(cls, topology: TreeTopology) -> WorkingSet:
        return cls(topology.branch_ids, topology.leaf_ids)

    def is_empty(self) -> bool:
        return not self.branch and not self.leaf

    def check(self, topology: TreeTopology) -> None:
        bad = sorted(self.branch - set(topology.branch_ids)) + sorted(self.leaf - set(topology.leaf_ids))
        if bad:
            raise StructuralError(f"working set names nodes {bad} outside a depth-{topology.depth} tree")

    def mask(self, layout: Layout) -> np.ndarray:
        """Free-variable mask over the solver's flat vector."""
        branches = [t - 1 for t in sorted(self.branch)]
        leaves = [t - layout.L for t in sorted(self.leaf)]
        return layout.branch_mask(branches) | layout.leaf_mask(leaves)


@dataclass(frozen=True)
class DecompConfig:
    psi: float = 1.25e-4
    max_macro: int = 10
    inner_iters: int = 40
    initialization: bool = True
    init_iters: int = 5
    variant: str = "S-NB-DEC"
    seed: int = 0
    inner_tol: float = 1e-8
    init_schedule: str = "prox"

    def __post_init__(self):
        if self.psi < 0:
            raise ConfigError(f"psi must be >= 0, got {self.psi}")
        if self.max_macro < 0 or self.inner_iters < 1 or self.init_iters < 1:
            raise ConfigError("max_macro >= 0, inner_iters >= 1 and init_iters >= 1 required")
        if self.init_schedule not in ("prox", "continuation"):
            raise ConfigError(f"init_schedule must be 'prox' or 'continuation', got {self.init_schedule!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class DecompResult(TrainResult):
    """Training result plus the per-macro-iteration records and the visit order."""

    records: list = field(default_factory=list)
    visits: list = field(default_factory=list)


def _inner_config(cfg: DecompConfig, solver: SolverConfig | None) -> SolverConfig:
    base = SolverConfig() if solver is None else solver
    return replace(base, continuation=False)


def subproblem_solve(
    current: TreeParams,
    ws: WorkingSet,
    psi: float,
    problem: Problem,
    inner_cfg: SolverConfig,
    max_iters: int = 40,
    tol: float = 1e-8,
    state: LineSearchState | None = None,
) -> TreeParams:
    """Approximately minimise the proximal subproblem over the working set.

    Variables outside ``ws`` stay at ``current``.  The proximal term is
    (psi/2) times the squared distance of the free variables from their
    current values, measured in the solver's split coordinates.
    """
    if ws.is_empty():
        return current.copy()
    layout = Layout.of(current)
    ws.check(current.topology)
    free = ws.mask(layout)
    x0 = layout.project(layout.pack(current))
    base = layout.objective(problem)
    if psi > 0:

        def fun_grad(x):
            f, g = base(x)
            d = np.where(free, x - x0, 0.0)
            return f + 0.5 * psi * float(d @ d), g + psi * d

    else:
        fun_grad = base
    x, *_ = minimize(fun_grad, x0, layout.project, inner_cfg, max_iters=max_iters, grad_tol=tol, free=free, state=state,
                         metric=layout.metric)
    return layout.unpack(x)


def merge_update(current: TreeParams, partial: TreeParams, ws: WorkingSet) -> TreeParams:
    """Copy the working-set blocks of ``partial`` over ``current``."""
    a, mu, c = current.a.copy(), current.mu.copy(), current.c.copy()
    B = current.topology.n_branch
    for t in ws.branch:
        a[:, t - 1] = partial.a[:, t - 1]
        mu[t - 1] = partial.mu[t - 1]
    for t in ws.leaf:
        c[:, t - B - 1] = partial.c[:, t - B - 1]
    return TreeParams(a, mu, c)


def _accuracy(params: TreeParams, problem: Problem, test) -> float | None:
    if test is None:
        return None
    from .core import predict

    X, y = test
    return float(np.mean(predict(params, problem.cdf, X) == np.asarray(y)))


def nb_dec(
    problem: Problem,
    topology: TreeTopology,
    cfg: DecompConfig,
    select,
    start: TreeParams,
    solver: SolverConfig | None = None,
    test=None,
    share_state: bool = False,
    initialization: bool = False,
) -> DecompResult:
    """Generic node-based decomposition loop.

    ``select(macro, rng)`` returns the list of working sets processed in that
    macro-iteration.  Each is solved, merged, and the objective recorded.
    ``share_state`` carries the spectral step memory across subproblems.
    """
    t0 = time.perf_counter()
    inner = _inner_config(cfg, solver)
    rng = np.random.default_rng([int(cfg.seed) % 2**63])
    current = start.copy()
    value = problem.training_value(current)
    trace = [value]
    records, visits = [], []
    state = LineSearchState() if share_state else None

    def record(macro):
        rounded = round_leaves(problem, current)
        records.append(
            {
                "macro": macro,
                "objective": value,
                "test_accuracy": _accuracy(rounded, problem, test),
                "cumulative_seconds": time.perf_counter() - t0,
            }
        )

    if initialization:
        if cfg.init_schedule == "continuation":
            base = SolverConfig() if solver is None else solver
            warm = replace(base, continuation=True, max_iters=cfg.init_iters)
            current = train(problem, topology, warm, current).relaxed_params
        else:
            full = WorkingSet.full(topology)
            partial = subproblem_solve(current, full, cfg.psi, problem, inner, cfg.init_iters, cfg.inner_tol, state)
            current = merge_update(current, partial, full)
        value = problem.training_value(current)
        trace.append(value)
        record(0)
    for macro in range(1, cfg.max_macro + 1):
        sets = select(macro, rng)
        visits.append([sorted(ws.branch) for ws in sets])
        for ws in sets:
            partial = subproblem_solve(current, ws, cfg.psi, problem, inner, cfg.inner_iters, cfg.inner_tol, state)
            current = merge_update(current, partial, ws)
            value = problem.training_value(current)
            trace.append(value)
        record(macro)
    rounded = round_leaves(problem, current)
    return DecompResult(
        params=rounded,
        objective_trace=np.array(trace),
        final_objective=problem.training_value(rounded),
        status="iter_budget",
        elapsed=time.perf_counter() - t0,
        relaxed_params=current,
        iterations=len(trace) - 1,
        records=records,
        visits=visits,
    )


def s_nb_dec(
    problem: Problem,
    topology: TreeTopology,
    cfg: DecompConfig,
    start: TreeParams | None = None,
    solver: SolverConfig | None = None,
    test=None,
) -> DecompResult:
    """Single-branch decomposition: each macro-iteration visits every branch once in random order.

    Every subproblem frees one branch node and all leaves.  Without a start
    the run begins from a = 0, mu = 0 and uniform class weights.
    """
    if start is None:
        start = TreeParams.zeros(problem.X.shape[1], topology.depth, problem.n_classes)
    leaves = frozenset(topology.leaf_ids)

    def select(macro, rng):
        order = rng.permutation(topology.n_branch) + 1
        return [WorkingSet({int(t)}, leaves) for t in order]

    return nb_dec(problem, topology, cfg, select, start, solver, test, initialization=cfg.initialization)


def c_nb_dec(
    problem: Problem,
    topology: TreeTopology,
    cfg: DecompConfig,
    start: TreeParams | None = None,
    solver: SolverConfig | None = None,
    test=None,
) -> DecompResult:
    """Alternate all branch nodes (no leaves) with all leaves (no branches)."""
    if cfg.psi == 0:
        warnings.warn(
            "two-block alternation without a proximal term has no convergence guarantee; use psi > 0",
            stacklevel=2,
        )
    if start is None:
        start = TreeParams.zeros(problem.X.shape[1], topology.depth, problem.n_classes)
    branches = WorkingSet(topology.branch_ids, ())
    leaves = WorkingSet((), topology.leaf_ids)
    return nb_dec(problem, topology, cfg, lambda m, rng: [branches, leaves], start, solver, test,
                  initialization=cfg.initialization)


def run_decomposition(problem, topology, cfg: DecompConfig, start=None, solver=None, test=None) -> DecompResult:
    fn = s_nb_dec if cfg.variant == "S-NB-DEC" else c_nb_dec
    return fn(problem, topology, cfg, start, solver, test)


def write_records(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
