import itertools
import math

import numpy as np
import pytest


def random_instance(rng, n, c, n_y=None, density=0.4):
    n_y = n if n_y is None else n_y
    U = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, c))
    V = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_y, c))
    S = (rng.random((n, n_y)) < density).astype(np.int8)
    return U, V, S


def loglik_loops(U, V, S, lam):
    """Literal double loop over every pair, scalar math only."""
    n, c = len(U), len(U[0])
    total = 0.0
    for i in range(n):
        for j in range(len(V)):
            th = lam / c * sum(float(U[i][k]) * float(V[j][k]) for k in range(c))
            total += S[i][j] * th - math.log1p(math.exp(th))
    return total


def all_sign_vectors(n):
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
