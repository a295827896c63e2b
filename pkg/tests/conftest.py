import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from rctree.core import LogisticCdf, TreeParams  # noqa: E402
from rctree.objective import PenaltySpec, Problem, default_costs  # noqa: E402


def random_params(rng, p, depth, K, scale=1.0):
    B, L = 2**depth - 1, 2**depth
    c = rng.uniform(size=(K, L))
    c /= c.sum(axis=0)
    return TreeParams(rng.uniform(-scale, scale, (p, B)), rng.uniform(-1, 1, B), c)


def random_problem(rng, N=None, p=None, depth=None, K=None, gamma=512.0, specs=(), pen=None):
    N = int(rng.integers(8, 31)) if N is None else N
    p = int(rng.integers(1, 7)) if p is None else p
    depth = int(rng.integers(1, 3)) if depth is None else depth
    K = int(rng.integers(2, 2**depth + 1)) if K is None else K
    X = rng.uniform(size=(N, p))
    y = np.concatenate([np.arange(1, K + 1), rng.integers(1, K + 1, N - K)])
    rng.shuffle(y)
    pen = PenaltySpec.off() if pen is None else pen
    return Problem(X, y, default_costs(K), LogisticCdf(gamma), list(specs), pen), depth


def separable_blobs(rng, n=60, p=2):
    """Two well separated clusters in [0, 1]^p."""
    half = n // 2
    lo = rng.uniform(0.0, 0.3, size=(half, p))
    hi = rng.uniform(0.7, 1.0, size=(n - half, p))
    X = np.vstack([lo, hi])
    y = np.array([1] * half + [2] * (n - half))
    return X, y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
