"""Discrete latent factor model for cross-modal hashing.

Codes are ``{-1, +1}`` matrices ``U`` (modality x) and ``V`` (modality y) of
shape ``(n, c)``.  A pair ``(i, j)`` has logit ``theta_ij = (lam / c) * <U_i, V_j>``
and the model log-likelihood of a similarity matrix ``S`` is

    L = sum_ij  S_ij * theta_ij - log(1 + exp(theta_ij))

(no additive constant).  Everything here is a plain function of its inputs; the
trainer has its own blocked fast path and is checked against these.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractError
from .similarity import as_provider

DEFAULT_LAMBDA = 8.0
DEFAULT_MAX_ITER = 30
DEFAULT_GAMMA = 1.0
DEFAULT_ANCHORS = 500
DEFAULT_KERNEL_REG = 1e-3

# rows per block when a dense n x n temporary would be too large
_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class KernelSettings:
    anchors: int = DEFAULT_ANCHORS
    bandwidth: Optional[float] = None  # None -> mean pairwise distance heuristic
    reg: float = DEFAULT_KERNEL_REG

    def __post_init__(self):
        if self.anchors < 1:
            raise ConfigError("anchor count must be >= 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if self.reg < 0:
            raise ConfigError("kernel regularization must be >= 0")


@dataclass(frozen=True)
class Hyperparams:
    """Training and out-of-sample hyper-parameters.

    ``sample_size`` defaults to ``code_len``; its upper bound (``n``) can only
    be checked once the data is known, see :meth:`check_sample_size`.
    """

    lam: float = DEFAULT_LAMBDA
    code_len: int = 16
    max_iter: int = DEFAULT_MAX_ITER
    sample_size: Optional[int] = None
    seed: int = 0
    gamma_x: float = DEFAULT_GAMMA
    gamma_y: float = DEFAULT_GAMMA
    kernel: KernelSettings = field(default_factory=KernelSettings)

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.code_len < 1:
            raise ConfigError(f"code length must be >= 1, got {self.code_len}")
        if self.max_iter < 0:
            raise ConfigError(f"iteration count must be >= 0, got {self.max_iter}")
        if self.sample_size is None:
            object.__setattr__(self, "sample_size", self.code_len)
        if self.sample_size < 1:
            raise ConfigError(f"sample size must be >= 1, got {self.sample_size}")
        if self.gamma_x < 0 or self.gamma_y < 0:
            raise ConfigError("ridge parameters must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def check_sample_size(self, n):
        if self.sample_size > n:
            raise ConfigError(
                f"sample size {self.sample_size} exceeds training set size {n}")


@dataclass
class GradHessBound:
    """Column gradient plus the scalar of the diagonal Hessian lower bound."""

    grad: np.ndarray
    hess_coeff: float

    def __post_init__(self):
        if not self.hess_coeff < 0:
            raise ContractError("Hessian bound coefficient must be negative")


def sign(x):
    """Elementwise sign into ``{-1, +1}`` as int8, with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def check_codes(codes, name="codes"):
    """Validate a code matrix and return it as a 2-D int8 array."""
    b = np.asarray(codes)
    if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
        raise ContractError(f"{name} must be a non-empty 2-D matrix, got shape {b.shape}")
    if not np.isin(b, (-1, 1)).all():
        raise ContractError(f"{name} entries must be -1 or +1")
    return b.astype(np.int8, copy=False)


def sigmoid(x):
    out = expit(x)
    return float(out) if np.ndim(out) == 0 else out


def softplus(x):
    """``log(1 + exp(x))`` without overflow for large ``x``."""
    out = np.logaddexp(0.0, x)
    return float(out) if np.ndim(out) == 0 else out


def theta(u_row, v_row, lam):
    u = np.asarray(u_row)
    v = np.asarray(v_row)
    if u.shape != v.shape or u.ndim != 1 or u.size < 1:
        raise ContractError(f"code rows must be equal-length vectors, got {u.shape} and {v.shape}")
    return lam / u.size * float(np.dot(u.astype(np.int64), v.astype(np.int64)))


def _theta_block(U, V, lam):
    c = U.shape[1]
    return (lam / c) * (U.astype(np.float64) @ V.astype(np.float64).T)


def _check_pair(U, V, S):
    if U.shape[1] != V.shape[1]:
        raise ContractError(f"code lengths differ: {U.shape[1]} vs {V.shape[1]}")
    if S.shape != (U.shape[0], V.shape[0]):
        raise ContractError(
            f"similarity shape {S.shape} does not match codes ({U.shape[0]}, {V.shape[0]})")


def _row_blocks(n_rows, n_cols):
    step = max(1, _BLOCK_ELEMS // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield np.arange(start, min(start + step, n_rows))


def log_likelihood(U, V, S, lam):
    """Objective value; accepts real-valued ``U``/``V`` for relaxed evaluation."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2:
        raise ContractError("U and V must be 2-D")
    S = as_provider(S)
    _check_pair(U, V, S)
    total = 0.0
    for rows in _row_blocks(U.shape[0], V.shape[0]):
        th = _theta_block(U[rows], V, lam)
        s = S.block(rows, None)
        total += float(np.sum(s * th - softplus(th)))
    return total


def _check_bit(k, c):
    if not 0 <= k < c:
        raise ContractError(f"bit index {k} out of range for code length {c}")


def grad_u_col(k, U, V, S, lam):
    """Gradient of the objective with respect to column ``k`` of ``U``."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    S = as_provider(S)
    _check_pair(U, V, S)
    c = U.shape[1]
    _check_bit(k, c)
    out = np.empty(U.shape[0])
    for rows in _row_blocks(U.shape[0], V.shape[0]):
        resid = S.block(rows, None) - expit(_theta_block(U[rows], V, lam))
        out[rows] = (lam / c) * (resid @ V[:, k])
    return out


def grad_v_col(k, U, V, S, lam):
    """Gradient of the objective with respect to column ``k`` of ``V``."""
    return grad_u_col(k, V, U, as_provider(S).T, lam)


def hess_bound_coeff(n_or_m, lam, c):
    """Diagonal coefficient of the Hessian lower bound, ``-n lam^2 / (4 c^2)``."""
    if n_or_m < 1:
        raise ContractError("row count must be >= 1")
    return -n_or_m * lam * lam / (4.0 * c * c)


def surrogate_value(candidate, anchor, grad, hess_coeff, anchor_objective):
    """Quadratic minorizer of the column objective, expanded at ``anchor``."""
    d = np.asarray(candidate, dtype=np.float64) - np.asarray(anchor, dtype=np.float64)
    return anchor_objective + float(d @ np.asarray(grad, dtype=np.float64)) \
        + 0.5 * hess_coeff * float(d @ d)


def closed_form_update(grad, hess_coeff, current_col):
    """Maximizer of the surrogate over sign vectors: ``sign(grad - h * current)``."""
    return sign(np.asarray(grad, dtype=np.float64)
                - hess_coeff * np.asarray(current_col, dtype=np.float64))


def column_bound_u(k, U, V, S, lam):
    U = check_codes(U, "U")
    return GradHessBound(grad_u_col(k, U, V, S, lam),
                         hess_bound_coeff(V.shape[0], lam, U.shape[1]))


def column_bound_v(k, U, V, S, lam):
    V = check_codes(V, "V")
    return GradHessBound(grad_v_col(k, U, V, S, lam),
                         hess_bound_coeff(U.shape[0], lam, V.shape[1]))
