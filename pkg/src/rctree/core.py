"""Randomized classification tree: topology, routing probabilities, prediction.

Nodes are numbered breadth first starting from 1 at the root, so the children
of node ``t`` are ``2t`` (left) and ``2t + 1`` (right).  For a tree of depth
``D`` the branch nodes are ``1 .. 2**D - 1`` and the leaves are
``2**D .. 2**(D + 1) - 1``.  Internally arrays are indexed from 0 in the same
order (branch ``t`` lives in column ``t - 1``, leaf ``t`` in column
``t - 2**D``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DataError, InfeasibleError, StructuralError

#: |gamma * v| is clamped to this value before exponentiation.
EXP_CLAMP = 500.0


@dataclass(frozen=True)
class TreeTopology:
    """Static shape of a maximal binary tree of a given depth."""

    depth: int

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise StructuralError(f"depth must be a positive integer, got {self.depth!r}")

    @property
    def n_branch(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaf(self) -> int:
        return 2**self.depth

    @property
    def branch_ids(self) -> range:
        return range(1, 2**self.depth)

    @property
    def leaf_ids(self) -> range:
        return range(2**self.depth, 2 ** (self.depth + 1))

    def _check_leaf(self, t: int) -> None:
        if t not in self.leaf_ids:
            raise StructuralError(f"unknown leaf id {t}")

    def _check_branch(self, t: int) -> None:
        if t not in self.branch_ids:
            raise StructuralError(f"unknown branch id {t}")

    def _path(self, leaf: int) -> list[tuple[int, bool]]:
        """(ancestor, went_left) pairs from the root down to ``leaf``."""
        path = []
        node = leaf
        while node > 1:
            parent = node // 2
            path.append((parent, node == 2 * parent))
            node = parent
        return path[::-1]

    def ancestors_left(self, t: int) -> frozenset[int]:
        self._check_leaf(t)
        return frozenset(b for b, left in self._path(t) if left)

    def ancestors_right(self, t: int) -> frozenset[int]:
        self._check_leaf(t)
        return frozenset(b for b, left in self._path(t) if not left)

    def descendant_leaves(self, t: int) -> frozenset[int]:
        self._check_branch(t)
        lo, hi = t, t
        while lo < 2**self.depth:
            lo, hi = 2 * lo, 2 * hi + 1
        return frozenset(range(lo, hi + 1))

    @cached_property
    def ancestor_index(self) -> np.ndarray:
        """(n_leaf, depth) array of 0-based branch indices along each root-leaf path."""
        return np.array(
            [[b - 1 for b, _ in self._path(t)] for t in self.leaf_ids], dtype=np.intp
        )

    @cached_property
    def ancestor_is_left(self) -> np.ndarray:
        """(n_leaf, depth) boolean array, True where the path takes the left edge."""
        return np.array([[left for _, left in self._path(t)] for t in self.leaf_ids], dtype=bool)

    @cached_property
    def path_scatter(self) -> np.ndarray:
        """(n_leaf * depth, n_branch) 0/1 matrix summing per-path terms into branch columns."""
        m = np.zeros((self.n_leaf * self.depth, self.n_branch))
        m[np.arange(self.n_leaf * self.depth), self.ancestor_index.ravel()] = 1.0
        return m


@dataclass(frozen=True)
class LogisticCdf:
    gamma: float = 512.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def scaled(self, v):
        """gamma * v clamped to [-EXP_CLAMP, EXP_CLAMP]."""
        return np.clip(self.gamma * np.asarray(v, dtype=float), -EXP_CLAMP, EXP_CLAMP)

    def __call__(self, v):
        return expit(self.scaled(v))


@dataclass
class TreeParams:
    """Branch coefficients ``a`` (p x B), intercepts ``mu`` (B,) and leaf weights ``c`` (K x L)."""

    a: np.ndarray
    mu: np.ndarray
    c: np.ndarray
    topology: TreeTopology = field(init=False, repr=False)

    def __post_init__(self):
        self.a = np.array(self.a, dtype=float, ndmin=2)
        self.mu = np.array(self.mu, dtype=float, ndmin=1)
        self.c = np.array(self.c, dtype=float, ndmin=2)
        n_branch = self.a.shape[1]
        depth = int(round(np.log2(n_branch + 1)))
        if 2**depth - 1 != n_branch or self.mu.shape != (n_branch,):
            raise StructuralError(
                f"inconsistent shapes a={self.a.shape}, mu={self.mu.shape} for a maximal tree"
            )
        if self.c.shape[1] != n_branch + 1:
            raise StructuralError(f"c must have {n_branch + 1} leaf columns, got {self.c.shape}")
        self.topology = TreeTopology(depth)

    @property
    def n_features(self) -> int:
        return self.a.shape[0]

    @property
    def n_classes(self) -> int:
        return self.c.shape[0]

    def copy(self) -> TreeParams:
        return TreeParams(self.a.copy(), self.mu.copy(), self.c.copy())

    def is_feasible(self, tol: float = 1e-12) -> bool:
        return bool(
            np.all(np.abs(self.a) <= 1 + tol)
            and np.all(np.abs(self.mu) <= 1 + tol)
            and np.all(self.c >= -tol)
            and np.all(self.c <= 1 + tol)
            and np.allclose(self.c.sum(axis=0), 1.0, rtol=0, atol=tol * self.c.shape[0])
        )

    # flat packing used by the optimizers: [a (row major), mu, c (row major)]
    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a.ravel(), self.mu, self.c.ravel()])

    @classmethod
    def from_vector(cls, x, n_features: int, depth: int, n_classes: int) -> TreeParams:
        nb, nl = 2**depth - 1, 2**depth
        na = n_features * nb
        x = np.asarray(x, dtype=float)
        return cls(
            x[:na].reshape(n_features, nb),
            x[na : na + nb],
            x[na + nb :].reshape(n_classes, nl),
        )

    @classmethod
    def zeros(cls, n_features: int, depth: int, n_classes: int) -> TreeParams:
        """The feasible cold start: a = 0, mu = 0, every leaf uniform over classes."""
        nb = 2**depth - 1
        return cls(
            np.zeros((n_features, nb)), np.zeros(nb), np.full((n_classes, nb + 1), 1.0 / n_classes)
        )


def _as_rows(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def branch_probs(params: TreeParams, cdf: LogisticCdf, X) -> np.ndarray:
    """Left-branch probability for every sample (rows of X) and branch node: (N, B)."""
    X = _as_rows(X)
    if X.shape[1] != params.n_features:
        raise DataError(f"expected {params.n_features} features, got {X.shape[1]}")
    return cdf(X @ params.a / params.n_features - params.mu)


def branch_prob(params: TreeParams, cdf: LogisticCdf, x, t: int) -> float:
    """Probability that ``x`` takes the left edge at branch node ``t``."""
    params.topology._check_branch(t)
    return float(branch_probs(params, cdf, x)[0, t - 1])


def leaf_probs_from_branch(topology: TreeTopology, p_left: np.ndarray) -> np.ndarray:
    """Leaf membership probabilities (N, L) from left-branch probabilities (N, B)."""
    p_left = _as_rows(p_left)
    factors = np.where(
        topology.ancestor_is_left, p_left[:, topology.ancestor_index], 1.0 - p_left[:, topology.ancestor_index]
    )
    return factors.prod(axis=2)


def leaf_path_probs(params: TreeParams, cdf: LogisticCdf, X) -> np.ndarray:
    """Probability of reaching each leaf: (L,) for a single row, (N, L) for a matrix."""
    X_arr = np.asarray(X, dtype=float)
    rows = _as_rows(X_arr)
    if rows.shape[1] != params.n_features:
        raise DataError(f"expected {params.n_features} features, got {rows.shape[1]}")
    z = cdf.scaled(rows @ params.a / params.n_features - params.mu)
    # left and right factors computed separately so 1 - p never cancels
    left, right = expit(z), expit(-z)
    topo = params.topology
    idx = topo.ancestor_index
    P = np.where(topo.ancestor_is_left, left[:, idx], right[:, idx]).prod(axis=2)
    return P[0] if X_arr.ndim == 1 else P


def class_posterior(params: TreeParams, cdf: LogisticCdf, X) -> np.ndarray:
    """Estimated class membership probabilities sum_t c_kt P_xt: (K,) or (N, K)."""
    return leaf_path_probs(params, cdf, X) @ params.c.T


def predict(params: TreeParams, cdf: LogisticCdf, X):
    """Most probable class label (1-based), ties resolved toward the lowest label."""
    post = class_posterior(params, cdf, X)
    labels = np.argmax(post, axis=-1) + 1
    return int(labels) if post.ndim == 1 else labels


def leaf_costs(P, y, w) -> np.ndarray:
    """(L, K) table of sum_i P_it w[y_i, k]: the loss of labelling leaf t with class k."""
    P = _as_rows(P)
    W = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=int)
    if y.min() < 1 or y.max() > W.shape[0]:
        raise DataError(f"labels must lie in 1..{W.shape[0]}")
    return P.T @ W[y - 1]


def best_leaf_labels(P, y, w) -> np.ndarray:
    """Optimal integer class per leaf under the coverage constraint.

    Each leaf takes the class minimising its expected cost; when that leaves a
    class without any leaf the assignment is repaired to the cheapest one in
    which every class owns at least one leaf.  The repair is exact (dynamic
    programme over leaves and covered-class masks) and ties go to the lowest
    class at the lowest-numbered leaf.

    Returns 1-based labels, one per leaf.
    """
    cost = leaf_costs(P, y, w)
    n_leaf, K = cost.shape
    if K > n_leaf:
        raise InfeasibleError(f"need 2^D >= K: {n_leaf} leaves cannot cover {K} classes")
    labels = np.argmin(cost, axis=1)
    if len(np.unique(labels)) == K:
        return labels + 1

    full = (1 << K) - 1
    # best[l][mask]: min cost of leaves l.. given classes in mask already covered
    best = np.full((n_leaf + 1, full + 1), np.inf)
    best[n_leaf, full] = 0.0
    for leaf in range(n_leaf - 1, -1, -1):
        for mask in range(full + 1):
            best[leaf, mask] = min(
                cost[leaf, k] + best[leaf + 1, mask | (1 << k)] for k in range(K)
            )
    out = np.empty(n_leaf, dtype=int)
    mask = 0
    for leaf in range(n_leaf):
        target = best[leaf, mask]
        for k in range(K):
            if cost[leaf, k] + best[leaf + 1, mask | (1 << k)] == target:
                out[leaf] = k
                mask |= 1 << k
                break
    return out + 1


def labels_to_weights(labels, n_classes: int) -> np.ndarray:
    """One-hot (K, L) leaf weight table from 1-based leaf labels."""
    labels = np.asarray(labels, dtype=int)
    c = np.zeros((n_classes, labels.size))
    c[labels - 1, np.arange(labels.size)] = 1.0
    return c


# -- serialization ---------------------------------------------------------


def params_to_dict(params: TreeParams, cdf: LogisticCdf) -> dict:
    return {
        "depth": params.topology.depth,
        "gamma": float(cdf.gamma),
        "a": params.a.T.tolist(),
        "mu": params.mu.tolist(),
        "c": params.c.T.tolist(),
    }


def params_from_dict(doc: dict) -> tuple[TreeParams, LogisticCdf]:
    try:
        params = TreeParams(
            np.array(doc["a"], dtype=float).T, doc["mu"], np.array(doc["c"], dtype=float).T
        )
        cdf = LogisticCdf(float(doc["gamma"]))
    except KeyError as exc:
        raise DataError(f"model document lacks key {exc}") from None
    if params.topology.depth != int(doc["depth"]):
        raise StructuralError(
            f"declared depth {doc['depth']} does not match {params.topology.depth} branch columns"
        )
    return params, cdf


def save_model(path, params: TreeParams, cdf: LogisticCdf) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, cdf), indent=1))


def load_model(path) -> tuple[TreeParams, LogisticCdf]:
    return params_from_dict(json.loads(Path(path).read_text()))
