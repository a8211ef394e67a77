"""Hash functions for points outside the training set.

Two families per modality:

* linear: ridge regression of the codes on centered features, ``h(x) = sign(W^T (x - mean))``;
* kernel: RBF features against sampled anchor points, then one l2-regularized
  logistic regression per bit.

Model files ("DLFM", little-endian)::

    offset  size  field
    0       4     magic b"DLFM"
    4       2     version (u16, currently 1)
    6       1     modality (u8: 0 = x, 1 = y)
    7       1     kind (u8: 0 = linear, 1 = kernel)
    8       4     d feature dimension (u32)
    12      4     c code length (u32)
    16      4     a anchor count (u32, 0 for linear models)
    20      8*d   center, float64
    ...     8*r*c weights, float64 row-major; r = d (linear) or a + 1 (kernel,
                  intercept in the last row)
    kernel models then append:
    ...     8*a*d anchors, float64 row-major
    ...     8     bandwidth, float64
"""

import logging
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .data import FeatureMatrix, center as center_features
from .errors import ContractError, FormatError, LoadError, SingularSystemError
from .model import DEFAULT_ANCHORS, DEFAULT_KERNEL_REG, check_codes, sign

log = logging.getLogger(__name__)

MODEL_MAGIC = b"DLFM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHBBIII")
_MODALITIES = {"x": 0, "y": 1}
_KINDS = {"linear": 0, "kernel": 1}

RESIDUAL_RTOL = 1e-6
BANDWIDTH_SUBSAMPLE = 1000


@dataclass
class LinearHashModel:
    weights: np.ndarray  # (d, c)
    center: np.ndarray  # (d,)
    modality: str = "x"

    def __post_init__(self):
        if not np.isfinite(self.weights).all():
            raise ContractError("linear hash weights must be finite")

    @property
    def dim(self):
        return self.weights.shape[0]

    @property
    def bits(self):
        return self.weights.shape[1]


@dataclass
class KernelHashModel:
    anchors: np.ndarray  # (a, d), in centered coordinates
    bandwidth: float
    weights: np.ndarray  # (a + 1, c), intercept last
    center: np.ndarray  # (d,)
    modality: str = "x"

    def __post_init__(self):
        if self.anchors.shape[0] < 1:
            raise ContractError("kernel model needs at least one anchor")
        if not self.bandwidth > 0:
            raise ContractError("bandwidth must be positive")

    @property
    def dim(self):
        return self.anchors.shape[1]

    @property
    def bits(self):
        return self.weights.shape[1]


def _centered(X):
    """Centered training matrix and the mean that was removed.

    Plain arrays are taken as already centered (zero offset); a
    :class:`FeatureMatrix` is centered here unless it already is.
    """
    if isinstance(X, FeatureMatrix):
        fm = X if X.centered else center_features(X)
        return fm.values, fm.center
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError("features must be 2-D")
    return X, np.zeros(X.shape[1])


def _check_rows(X, codes):
    if X.shape[0] != codes.shape[0]:
        raise ContractError(f"{X.shape[0]} feature rows but {codes.shape[0]} code rows")


def fit_linear(X, codes, gamma=1.0, modality="x"):
    """Ridge solution ``W = (X^T X + gamma I)^{-1} X^T B`` via Cholesky."""
    Xc, mean = _centered(X)
    B = check_codes(codes).astype(np.float64)
    _check_rows(Xc, B)
    if gamma < 0:
        raise ContractError("gamma must be nonnegative")
    d = Xc.shape[1]
    gram = Xc.T @ Xc + gamma * np.eye(d)
    rhs = Xc.T @ B
    hint = "; use gamma > 0" if gamma == 0 else ""
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularSystemError(f"normal equations are not positive definite{hint}") from None
    diag = np.diag(factor[0]) ** 2
    if diag.min() <= 1e-12 * diag.max():
        raise SingularSystemError(f"normal equations are numerically singular{hint}")
    W = linalg.cho_solve(factor, rhs, check_finite=False)
    resid = np.linalg.norm(gram @ W - rhs)
    if resid > RESIDUAL_RTOL * max(np.linalg.norm(rhs), np.finfo(float).tiny):
        raise SingularSystemError(f"ridge solve residual {resid:.3g} too large{hint}")
    return LinearHashModel(W, mean, modality)


def _as_queries(model, query):
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != model.dim:
        raise ContractError(f"query dimension {q.shape[1]} != model dimension {model.dim}")
    return q - model.center, single


def hash_linear(model, query):
    """Codes for one query vector (1-D result) or a batch of rows."""
    q, single = _as_queries(model, query)
    out = sign(q @ model.weights)
    return out[0] if single else out


def rbf_features(X, anchors, bandwidth):
    d2 = cdist(np.atleast_2d(X), anchors, "sqeuclidean")
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def auto_bandwidth(X, rng):
    """Mean pairwise Euclidean distance over a random subsample."""
    if X.shape[0] > BANDWIDTH_SUBSAMPLE:
        X = X[rng.choice(X.shape[0], BANDWIDTH_SUBSAMPLE, replace=False)]
    if X.shape[0] < 2:
        return 1.0
    bw = float(np.mean(pdist(X)))
    return bw if bw > 0 else 1.0


def _logreg_newton(F, target, reg, tol=1e-6, max_iter=100):
    """l2-regularized logistic regression by damped Newton steps.

    Minimizes ``mean(log(1 + e^z) - t z) + reg/2 * |w[:-1]|^2`` with
    ``z = F w``; the last column of ``F`` is the unpenalized intercept.
    Returns ``(w, converged)``.
    """
    n, p = F.shape
    penalty = np.full(p, reg)
    penalty[-1] = 0.0
    w = np.zeros(p)

    def loss(w):
        z = F @ w
        return float(np.mean(np.logaddexp(0.0, z) - target * z) + 0.5 * np.sum(penalty * w * w))

    f = loss(w)
    for _ in range(max_iter):
        z = F @ w
        prob = 1.0 / (1.0 + np.exp(-z))
        grad = F.T @ (prob - target) / n + penalty * w
        if np.linalg.norm(grad) <= tol:
            return w, True
        hess = (F * (prob * (1.0 - prob))[:, None]).T @ F / n + np.diag(penalty)
        hess[np.diag_indices(p)] += 1e-10
        step = linalg.solve(hess, grad, assume_a="pos", check_finite=False)
        t = 1.0
        while True:
            w_new = w - t * step
            f_new = loss(w_new)
            if f_new <= f - 1e-4 * t * float(grad @ step) or t < 1e-10:
                break
            t *= 0.5
        w, f = w_new, f_new
    z = F @ w
    prob = 1.0 / (1.0 + np.exp(-z))
    grad = F.T @ (prob - target) / n + penalty * w
    return w, bool(np.linalg.norm(grad) <= tol)


def fit_kernel(X, codes, anchors=DEFAULT_ANCHORS, bandwidth=None, seed=0,
               reg=DEFAULT_KERNEL_REG, modality="x", max_iter=100):
    """Kernel logistic regression hash functions (one classifier per bit).

    ``anchors`` is clamped to the number of rows.  ``bandwidth=None`` picks the
    mean pairwise distance of (a subsample of) the centered training data.
    """
    Xc, mean = _centered(X)
    B = check_codes(codes)
    _check_rows(Xc, B)
    if anchors < 1:
        raise ContractError("need at least one anchor")
    rng = np.random.default_rng(seed)
    a = min(anchors, Xc.shape[0])
    anchor_rows = np.sort(rng.choice(Xc.shape[0], size=a, replace=False))
    A = Xc[anchor_rows].copy()
    if bandwidth is None:
        bandwidth = auto_bandwidth(Xc, rng)
    F = np.hstack([rbf_features(Xc, A, bandwidth), np.ones((Xc.shape[0], 1))])
    W = np.empty((a + 1, B.shape[1]))
    for k in range(B.shape[1]):
        target = (B[:, k] + 1) / 2.0
        W[:, k], ok = _logreg_newton(F, target, reg, max_iter=max_iter)
        if not ok:
            warnings.warn(f"logistic regression for bit {k} did not converge; "
                          "keeping the last iterate", RuntimeWarning, stacklevel=2)
    return KernelHashModel(A, float(bandwidth), W, mean, modality)


def kernel_scores(model, query):
    q, single = _as_queries(model, query)
    phi = rbf_features(q, model.anchors, model.bandwidth)
    return phi @ model.weights[:-1] + model.weights[-1], single


def hash_kernel(model, query):
    scores, single = kernel_scores(model, query)
    out = sign(scores)
    return out[0] if single else out


def encode(model, query):
    if isinstance(model, KernelHashModel):
        return hash_kernel(model, query)
    return hash_linear(model, query)


def save_model(path, model):
    kernel = isinstance(model, KernelHashModel)
    a = model.anchors.shape[0] if kernel else 0
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, _MODALITIES[model.modality],
                                    _KINDS["kernel" if kernel else "linear"],
                                    model.dim, model.bits, a))
        fh.write(np.ascontiguousarray(model.center, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
        if kernel:
            fh.write(np.ascontiguousarray(model.anchors, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", model.bandwidth))


def load_model(path):
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise LoadError(f"{path}: no such file")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, modality, kind, d, c, a = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        modality = {v: k for k, v in _MODALITIES.items()}[modality]
        kind = {v: k for k, v in _KINDS.items()}[kind]
    except KeyError:
        raise FormatError(f"{path}: bad modality or model kind tag") from None
    rows = d if kind == "linear" else a + 1
    expected = 8 * (d + rows * c) + (8 * (a * d + 1) if kind == "kernel" else 0)
    if len(raw) - _MODEL_HEADER.size != expected:
        raise FormatError(f"{path}: payload size does not match header")
    vals = np.frombuffer(raw, dtype="<f8", offset=_MODEL_HEADER.size).astype(np.float64)
    center, vals = vals[:d], vals[d:]
    weights, vals = vals[:rows * c].reshape(rows, c), vals[rows * c:]
    if kind == "linear":
        return LinearHashModel(weights, center, modality)
    anchors = vals[:a * d].reshape(a, d)
    return KernelHashModel(anchors, float(vals[a * d]), weights, center, modality)
