"""Feature and label ingestion, centering, splits and synthetic data.

Binary feature files ("DLFX", little-endian)::

    offset  size  field
    0       4     magic b"DLFX"
    4       2     version (u16, currently 1)
    6       8     n rows (u64)
    14      4     d columns (u32)
    18      4*n*d float32 values, row-major

CSV files hold one row per line, comma separated, no header.
"""

import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError, LoadError, NonFiniteError
from .similarity import DenseSimilarity, LabelSimilarity

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"DLFX"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHQI")

DENSE_THRESHOLD = 10_000


@dataclass
class FeatureMatrix:
    values: np.ndarray
    center: Optional[np.ndarray] = None

    @property
    def centered(self):
        return self.center is not None

    @property
    def shape(self):
        return self.values.shape


@dataclass
class LabelMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ContractError(f"labels must be 2-D, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ContractError("label entries must be 0 or 1")
        self.values = v.astype(np.uint8, copy=False)

    @property
    def shape(self):
        return self.values.shape

    def empty_rows(self):
        return np.flatnonzero(~self.values.any(axis=1))


@dataclass(frozen=True)
class SplitSpec:
    query_count: int
    seed: int = 0


def _detect_format(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "binary" if head == FEATURE_MAGIC else "csv"


def _check_finite(values, path):
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise NonFiniteError(path, int(row), int(col))


def _read_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FEATURE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = len(raw) - _FEATURE_HEADER.size
    if n * d * 4 != payload:
        raise FormatError(f"{path}: header says {n}x{d} floats but payload has {payload} bytes")
    values = np.frombuffer(raw, dtype="<f4", offset=_FEATURE_HEADER.size)
    return values.reshape(n, d).astype(np.float64)


def _read_csv(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise FormatError(f"{path}: row {i} has {len(r)} columns, expected {width}")
    return np.array(rows, dtype=np.float64)


def load_matrix(path, format=None):
    """Read a raw matrix from a DLFX or CSV file (format sniffed when None)."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise LoadError(f"{path}: no such file")
    fmt = format or _detect_format(path)
    if fmt == "binary":
        values = _read_binary(path)
    elif fmt == "csv":
        values = _read_csv(path)
    else:
        raise ContractError(f"unknown format {fmt!r}")
    _check_finite(values, path)
    return values


def load_features(path, format=None):
    return FeatureMatrix(load_matrix(path, format))


def save_features(path, values, format="binary"):
    values = np.asarray(values.values if isinstance(values, FeatureMatrix) else values)
    if values.ndim != 2:
        raise ContractError("features must be 2-D")
    if format == "binary":
        n, d = values.shape
        with open(path, "wb") as fh:
            fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d))
            fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
    elif format == "csv":
        with open(path, "w") as fh:
            for row in values:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
    else:
        raise ContractError(f"unknown format {format!r}")


def load_labels(path, format=None):
    values = load_matrix(path, format)
    try:
        labels = LabelMatrix(values)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from None
    empty = labels.empty_rows()
    if empty.size:
        log.warning("%s: %d rows have no label (first: %d)", path, empty.size, empty[0])
    return labels


def save_labels(path, labels):
    values = labels.values if isinstance(labels, LabelMatrix) else np.asarray(labels)
    with open(path, "w") as fh:
        for row in values.astype(int):
            fh.write(",".join(map(str, row)) + "\n")


def center(features):
    """Subtract column means; the mean is kept for mapping queries later."""
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ContractError("need at least one feature row")
    mean = values.mean(axis=0)
    out = values - mean
    # second pass removes the rounding left by the first
    residual = out.mean(axis=0)
    out -= residual
    mean = mean + residual
    if isinstance(features, FeatureMatrix) and features.center is not None:
        mean = features.center + mean
    return FeatureMatrix(out, mean)


def similarity_from_labels(a, b, dense_threshold=DENSE_THRESHOLD):
    """Similarity provider with ``S_ij = 1`` iff rows i of ``a`` and j of ``b`` share a label."""
    la = a.values if isinstance(a, LabelMatrix) else np.asarray(a)
    lb = b.values if isinstance(b, LabelMatrix) else np.asarray(b)
    provider = LabelSimilarity(la, lb)
    if max(provider.shape) <= dense_threshold:
        return DenseSimilarity(provider.dense())
    return provider


def make_split(n, spec):
    """Seeded query/retrieval partition of ``range(n)``, both sorted."""
    if not 0 <= spec.query_count < n:
        raise ContractError(f"query count {spec.query_count} must be in [0, {n})")
    rng = np.random.default_rng(spec.seed)
    query = np.sort(rng.choice(n, size=spec.query_count, replace=False))
    mask = np.ones(n, dtype=bool)
    mask[query] = False
    return query, np.flatnonzero(mask)


def _random_embedding(rng, k, d):
    # orthonormal k -> d map when d >= k, else a plain Gaussian projection
    g = rng.standard_normal((d, k))
    if d >= k:
        q, _ = np.linalg.qr(g)
        return q.T
    return g.T


def synth_crossmodal(n, d_x, d_y, classes=2, noise=0.0, seed=0, kind="clusters"):
    """Paired two-modality data with one-hot class labels.

    ``kind="clusters"``: each class gets a random center per modality and points
    are center plus isotropic Gaussian noise of scale ``noise``.
    ``kind="xor"``: two classes given by the XOR of the signs of a 2-D latent
    point on the corners of a square, embedded linearly in each modality; no
    linear function of the features separates them.
    """
    if classes < 2:
        raise ContractError("need at least two classes")
    rng = np.random.default_rng(seed)
    if kind == "clusters":
        y = rng.integers(0, classes, size=n)
        cx = rng.standard_normal((classes, d_x))
        cy = rng.standard_normal((classes, d_y))
        X = cx[y] + noise * rng.standard_normal((n, d_x))
        Y = cy[y] + noise * rng.standard_normal((n, d_y))
    elif kind == "xor":
        if classes != 2:
            raise ContractError("xor data has exactly two classes")
        corners = rng.choice([-1.0, 1.0], size=(n, 2))
        y = (corners[:, 0] * corners[:, 1] > 0).astype(int)
        X = (corners + noise * rng.standard_normal((n, 2))) @ _random_embedding(rng, 2, d_x)
        Y = (corners + noise * rng.standard_normal((n, 2))) @ _random_embedding(rng, 2, d_y)
    else:
        raise ContractError(f"unknown synthetic kind {kind!r}")
    labels = np.zeros((n, classes), dtype=np.uint8)
    labels[np.arange(n), y] = 1
    return X, Y, LabelMatrix(labels)
