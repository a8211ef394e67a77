"""Alternating column-wise training of the binary codes.

Each outer iteration updates every column of ``U`` (with ``V`` fixed) and then
every column of ``V`` (with ``U`` fixed), using the closed-form maximizer of a
quadratic lower bound.  Full mode sums the gradient over all ``n`` partners;
stochastic mode over ``m`` partners drawn once per phase.

Within the U phase row ``i`` of ``U`` only interacts with ``V``, so rows can be
processed in independent blocks, and the same holds for the rows of ``V`` in
the V phase.  The trainer keeps the integer inner products ``U_B V_J^T`` of a
block and patches them after each column flip.  They are exact integers in
``[-c, c]``, so the sigmoid and softplus reduce to table lookups and no stale
real-valued state is carried between column updates.
"""

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractError
from .model import Hyperparams, hess_bound_coeff, softplus
from .similarity import as_provider

log = logging.getLogger(__name__)

DEFAULT_BLOCK_ELEMS = 1 << 22
EARLY_STOP_RTOL = 1e-6


class Mode(str, enum.Enum):
    FULL = "full"
    STOCHASTIC = "stochastic"


@dataclass
class TrainConfig:
    hyper: Hyperparams = field(default_factory=Hyperparams)
    mode: Mode = Mode.STOCHASTIC
    trace: bool = True
    # None: every iteration, except stochastic runs with n > 5000 (every 5th)
    objective_eval_stride: Optional[int] = None
    early_stop: bool = False
    threads: int = 1
    block_elems: int = DEFAULT_BLOCK_ELEMS

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.objective_eval_stride is not None and self.objective_eval_stride < 1:
            raise ConfigError("objective stride must be >= 1")
        if self.threads < 1:
            raise ConfigError("thread count must be >= 1")

    def stride_for(self, n):
        if self.objective_eval_stride is not None:
            return self.objective_eval_stride
        if self.mode is Mode.STOCHASTIC and n > 5000:
            return 5
        return 1


@dataclass
class TrainState:
    U: np.ndarray
    V: np.ndarray
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    rng: Optional[np.random.Generator] = None


def init_codes(n, c, seed=0, rng=None):
    """Draw ``U`` and ``V`` uniformly from ``{-1, +1}^(n x c)``."""
    if n < 1 or c < 1:
        raise ContractError(f"need n >= 1 and c >= 1, got n={n}, c={c}")
    if rng is None:
        rng = np.random.default_rng(seed)
    U = (2 * rng.integers(0, 2, size=(n, c), dtype=np.int8) - 1).astype(np.int8)
    V = (2 * rng.integers(0, 2, size=(n, c), dtype=np.int8) - 1).astype(np.int8)
    return U, V


def objective_trace(state):
    return list(state.objective_trace)


class _Tables:
    """Sigmoid and softplus of ``(lam / c) * g`` for every integer ``g`` in ``[-c, c]``."""

    def __init__(self, lam, c):
        g = np.arange(-c, c + 1, dtype=np.float64)
        self.c = c
        self.scale = lam / c
        self.sigmoid = expit(self.scale * g)
        self.softplus = softplus(self.scale * g)


def _inner(A, B):
    # float64 matmul of small integers is exact and much faster than integer matmul
    return (A.astype(np.float64) @ B.astype(np.float64).T).astype(np.int16)


def _update_block(X_B, Y_J, S_BJ, tab, hess_coeff):
    """Run the c closed-form column updates on one block of rows, in place.

    ``X_B`` holds the block's codes (being updated), ``Y_J`` the fixed partner
    codes and ``S_BJ`` the matching similarity block.
    """
    c = tab.c
    G = _inner(X_B, Y_J)
    Yf = np.asfortranarray(Y_J, dtype=np.float64)
    SY = S_BJ.astype(np.float64) @ Yf
    A = tab.sigmoid[G + c]
    for k in range(c):
        grad = tab.scale * (SY[:, k] - A @ Yf[:, k])
        old = X_B[:, k]
        new = np.where(grad - hess_coeff * old >= 0, 1, -1).astype(np.int8)
        flipped = np.flatnonzero(new != old)
        if flipped.size:
            # rows whose code did not flip keep exactly the same logits
            G[flipped] += (2 * new[flipped, None]).astype(np.int16) * Y_J[None, :, k]
            A[flipped] = tab.sigmoid[G[flipped] + c]
            X_B[:, k] = new


def _phase(X, Y, S, partners, tab, config, pool):
    """Update every column of ``X`` given fixed ``Y``.

    ``S`` is oriented with rows indexing ``X``; ``partners`` selects the rows of
    ``Y`` (and columns of ``S``) entering the gradient sum, or ``None`` for all.
    """
    Y_J = Y if partners is None else Y[partners]
    m = Y_J.shape[0]
    hess = hess_bound_coeff(m, config.hyper.lam, X.shape[1])
    step = max(1, config.block_elems // m)
    starts = range(0, X.shape[0], step)

    def work(start):
        rows = slice(start, min(start + step, X.shape[0]))
        X_B = X[rows].copy()
        S_BJ = S.block(np.arange(rows.start, rows.stop), partners)
        _update_block(X_B, Y_J, S_BJ, tab, hess)
        return rows, X_B

    results = pool.map(work, starts) if pool is not None else map(work, starts)
    for rows, X_B in results:
        X[rows] = X_B


def _objective(U, V, S, tab, block_elems):
    c = tab.c
    total = 0.0
    step = max(1, block_elems // V.shape[0])
    for start in range(0, U.shape[0], step):
        rows = np.arange(start, min(start + step, U.shape[0]))
        G = _inner(U[rows], V)
        s = S.block(rows, None)
        total += tab.scale * float(np.sum(G[s.astype(bool)], dtype=np.float64)) \
            - float(np.sum(tab.softplus[G + c]))
    return total


def train(S, config, init=None):
    """Train codes for the similarity matrix ``S`` (array or provider).

    ``init`` optionally supplies starting ``(U, V)``; otherwise they are drawn
    from the run's seeded generator, which also drives stochastic sampling.
    """
    S = as_provider(S)
    n_x, n_y = S.shape
    hp = config.hyper
    c = hp.code_len
    rng = np.random.default_rng(hp.seed)
    if init is None:
        if n_x != n_y:
            raise ContractError("random initialization needs a square similarity matrix")
        U, V = init_codes(n_x, c, rng=rng)
    else:
        U = np.array(init[0], dtype=np.int8)
        V = np.array(init[1], dtype=np.int8)
        if U.shape != (n_x, c) or V.shape != (n_y, c):
            raise ContractError("initial codes do not match S and the code length")
    stochastic = config.mode is Mode.STOCHASTIC
    if stochastic:
        hp.check_sample_size(min(n_x, n_y))
    St = S.T
    tab = _Tables(hp.lam, c)
    stride = config.stride_for(max(n_x, n_y))
    state = TrainState(U=U, V=V, rng=rng)

    def record(t):
        value = _objective(U, V, S, tab, config.block_elems)
        state.objective_trace.append((t, value))
        log.debug("iteration %d objective %.6f", t, value)
        return value

    if config.trace:
        record(0)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for t in range(1, hp.max_iter + 1):
            cols = rows = None
            if stochastic:
                # sorted so that m = n reproduces the full-mode summation order
                cols = np.sort(rng.choice(n_y, size=hp.sample_size, replace=False))
            _phase(U, V, S, cols, tab, config, pool)
            if stochastic:
                rows = np.sort(rng.choice(n_x, size=hp.sample_size, replace=False))
            _phase(V, U, St, rows, tab, config, pool)
            state.iteration = t
            if config.trace and (t % stride == 0 or t == hp.max_iter):
                prev = state.objective_trace[-1][1]
                value = record(t)
                if config.early_stop and abs(value - prev) < EARLY_STOP_RTOL * abs(prev):
                    log.info("early stop at iteration %d", t)
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return state


def train_full(S, config, init=None):
    if Mode(config.mode) is not Mode.FULL:
        raise ConfigError("train_full needs mode=full")
    return train(S, config, init)


def train_stochastic(S, config, init=None):
    if Mode(config.mode) is not Mode.STOCHASTIC:
        raise ConfigError("train_stochastic needs mode=stochastic")
    return train(S, config, init)


def expected_trace_length(max_iter, stride):
    return math.ceil(max_iter / stride) + 1
