"""Bit-packed Hamming ranking and mean average precision.

Packed code files ("DLFC", little-endian)::

    offset  size       field
    0       4          magic b"DLFC"
    4       2          version (u16, currently 1)
    6       8          n rows (u64)
    14      4          c bits (u32)
    18      8*n*W      u64 words, W = ceil(c / 64) per row

Bit ``b`` of a row lives in word ``b // 64`` at position ``b % 64`` (LSB
first) and is set iff the code entry is +1.  Padding bits are zero.
"""

import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, EvaluationError, FormatError, LoadError
from .model import check_codes

CODE_MAGIC = b"DLFC"
CODE_VERSION = 1
_CODE_HEADER = struct.Struct("<4sHQI")

# query rows per batch when materializing query x database matrices
_QUERY_BATCH_ELEMS = 1 << 23


def words_for(c):
    return (c + 63) // 64


@dataclass
class PackedCodes:
    words: np.ndarray  # (n, ceil(c/64)) uint64
    bits: int

    def __post_init__(self):
        w = np.asarray(self.words, dtype=np.uint64)
        if w.ndim != 2 or w.shape[1] != words_for(self.bits):
            raise ContractError(f"need {words_for(self.bits)} words per row for {self.bits} bits")
        self.words = w

    @property
    def rows(self):
        return self.words.shape[0]

    def __len__(self):
        return self.rows


def pack(codes):
    """Pack an ``(n, c)`` {-1,+1} matrix into :class:`PackedCodes`."""
    b = check_codes(codes)
    n, c = b.shape
    W = words_for(c)
    bits = np.zeros((n, W * 64), dtype=bool)
    bits[:, :c] = b > 0
    raw = np.packbits(bits, axis=1, bitorder="little")
    return PackedCodes(raw.view("<u8").astype(np.uint64).reshape(n, W), c)


def unpack(packed):
    n = packed.rows
    raw = np.ascontiguousarray(packed.words, dtype="<u8").view(np.uint8).reshape(n, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :packed.bits]
    return np.where(bits.astype(bool), 1, -1).astype(np.int8)


def save_codes(path, codes):
    packed = codes if isinstance(codes, PackedCodes) else pack(codes)
    with open(path, "wb") as fh:
        fh.write(_CODE_HEADER.pack(CODE_MAGIC, CODE_VERSION, packed.rows, packed.bits))
        fh.write(np.ascontiguousarray(packed.words, dtype="<u8").tobytes())


def load_codes(path):
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise LoadError(f"{path}: no such file")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CODE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, c = _CODE_HEADER.unpack_from(raw)
    if magic != CODE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CODE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if c < 1:
        raise FormatError(f"{path}: code length must be >= 1")
    W = words_for(c)
    if len(raw) - _CODE_HEADER.size != 8 * n * W:
        raise FormatError(f"{path}: payload size does not match {n} rows of {c} bits")
    words = np.frombuffer(raw, dtype="<u8", offset=_CODE_HEADER.size).reshape(n, W)
    packed = PackedCodes(words.astype(np.uint64), c)
    if c % 64 and (packed.words[:, -1] >> np.uint64(c % 64)).any():
        raise FormatError(f"{path}: nonzero padding bits")
    return packed


def hamming(a, b, c=None):
    """Hamming distance between two packed rows."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ContractError("packed rows have different widths")
    if c is not None and a.shape[-1] != words_for(c):
        raise ContractError(f"row width does not match {c} bits")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_matrix(query, db):
    """All-pairs distances, shape ``(query.rows, db.rows)``."""
    if query.bits != db.bits:
        raise ContractError(f"code lengths differ: {query.bits} vs {db.bits}")
    x = query.words[:, None, :] ^ db.words[None, :, :]
    return np.bitwise_count(x).sum(axis=2, dtype=np.int64)


def rank_database(query_code, db):
    """Database indices by ascending distance, ties by ascending index."""
    q = np.asarray(query_code, dtype=np.uint64).reshape(1, -1)
    if q.shape[1] != db.words.shape[1]:
        raise ContractError("query width does not match the database")
    dist = np.bitwise_count(q ^ db.words).sum(axis=1, dtype=np.int64)
    return np.argsort(dist, kind="stable")


@dataclass
class GroundTruth:
    """Relevance ``rel(q, i) = 1`` iff query q and item i share a label."""

    query_labels: np.ndarray
    db_labels: np.ndarray

    def __post_init__(self):
        self.query_labels = np.asarray(getattr(self.query_labels, "values", self.query_labels))
        self.db_labels = np.asarray(getattr(self.db_labels, "values", self.db_labels))
        if self.query_labels.shape[1] != self.db_labels.shape[1]:
            raise ContractError("query and database label widths differ")

    def rel(self, q, i):
        return int(np.dot(self.query_labels[q].astype(np.int64), self.db_labels[i]) > 0)

    def rows(self, queries):
        lq = self.query_labels[queries].astype(np.float32)
        return (lq @ self.db_labels.astype(np.float32).T) > 0


def average_precision(ranking, rel, top_k=None):
    """AP of one ranking; ``rel`` is indexed by database item.

    Returns ``None`` when the query has no relevant item at all.  With
    ``top_k`` only the first k ranks count and AP is normalized by the number
    of relevant items found there (0.0 if none).
    """
    hits = np.asarray(rel, dtype=bool)[np.asarray(ranking)]
    if not hits.any():
        return None
    if top_k is not None:
        hits = hits[:top_k]
    found = np.cumsum(hits)
    total = found[-1] if found.size else 0
    if total == 0:
        return 0.0
    pos = np.flatnonzero(hits)
    # extended precision so the final rounding to float64 is (nearly always) correct
    terms = found[pos].astype(np.longdouble) / (pos + 1).astype(np.longdouble)
    return float(np.sum(terms) / total)


@dataclass
class MapResult:
    map: float
    scored: int
    skipped: int
    per_query: Optional[np.ndarray] = None


def mean_average_precision(query_codes, db_codes, truth, top_k=None):
    """MAP over queries having at least one relevant database item."""
    nq = query_codes.rows
    if truth.query_labels.shape[0] != nq or truth.db_labels.shape[0] != db_codes.rows:
        raise ContractError("ground truth does not match query/database sizes")
    per_query = np.full(nq, np.nan)
    batch = max(1, _QUERY_BATCH_ELEMS // max(db_codes.rows, 1))
    for start in range(0, nq, batch):
        qs = np.arange(start, min(start + batch, nq))
        dist = hamming_matrix(PackedCodes(query_codes.words[qs], query_codes.bits), db_codes)
        order = np.argsort(dist, axis=1, kind="stable")
        rel = truth.rows(qs)
        for r, q in enumerate(qs):
            ap = average_precision(order[r], rel[r], top_k)
            if ap is not None:
                per_query[q] = ap
    valid = ~np.isnan(per_query)
    scored = int(valid.sum())
    if scored == 0:
        raise EvaluationError("no query has a relevant database item")
    return MapResult(float(np.sum(per_query[valid]) / scored), scored, nq - scored, per_query)


def precision_at_k(query_codes, db_codes, truth, k):
    """Mean fraction of relevant items among the first k ranks."""
    dist = hamming_matrix(query_codes, db_codes)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rel = truth.rows(np.arange(query_codes.rows))
    return float(np.mean(np.take_along_axis(rel, order, axis=1)))
