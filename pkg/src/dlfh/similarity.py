"""Sources of the cross-modal similarity matrix S.

``S[i, j] = 1`` means item ``i`` of modality x and item ``j`` of modality y
are similar.  Providers hand out rectangular blocks so that callers never
need the full n x n matrix in memory.
"""

import numpy as np

from .errors import ContractError


class SimilarityProvider:
    """Read-only, indexable {0,1} matrix of shape ``(n_x, n_y)``."""

    shape: tuple

    def block(self, rows=None, cols=None):
        """Return ``S[rows][:, cols]`` as a C-contiguous int8 array.

        ``None`` selects every index along that axis.
        """
        raise NotImplementedError

    def column(self, j):
        return self.block(None, np.array([j]))[:, 0]

    def row(self, i):
        return self.block(np.array([i]), None)[0]

    def dense(self):
        return self.block(None, None)

    def transpose(self):
        raise NotImplementedError

    @property
    def T(self):
        return self.transpose()


class DenseSimilarity(SimilarityProvider):
    """Provider backed by an explicit matrix."""

    def __init__(self, matrix):
        s = np.asarray(matrix)
        if s.ndim != 2:
            raise ContractError(f"similarity matrix must be 2-D, got shape {s.shape}")
        if not np.isin(s, (0, 1)).all():
            raise ContractError("similarity matrix entries must be 0 or 1")
        self._s = np.ascontiguousarray(s, dtype=np.int8)
        self.shape = self._s.shape

    def block(self, rows=None, cols=None):
        s = self._s
        if rows is None and cols is None:
            return s.copy()
        if rows is None:
            return s[:, np.asarray(cols)]
        if cols is None:
            return s[np.asarray(rows)]
        return s[np.ix_(np.asarray(rows), np.asarray(cols))]

    def transpose(self):
        out = DenseSimilarity.__new__(DenseSimilarity)
        out._s = np.ascontiguousarray(self._s.T)
        out.shape = out._s.shape
        return out


class LabelSimilarity(SimilarityProvider):
    """Provider computing ``S[i, j] = [<labels_x[i], labels_y[j]> > 0]`` on demand."""

    def __init__(self, labels_x, labels_y):
        lx = np.asarray(labels_x)
        ly = np.asarray(labels_y)
        if lx.ndim != 2 or ly.ndim != 2:
            raise ContractError("label matrices must be 2-D")
        if lx.shape[1] != ly.shape[1]:
            raise ContractError(
                f"label width mismatch: {lx.shape[1]} vs {ly.shape[1]}")
        # float32 matmul is exact for counts far beyond any realistic label width
        self._lx = np.ascontiguousarray(lx, dtype=np.float32)
        self._ly = np.ascontiguousarray(ly, dtype=np.float32)
        self.shape = (lx.shape[0], ly.shape[0])

    def block(self, rows=None, cols=None):
        lx = self._lx if rows is None else self._lx[np.asarray(rows)]
        ly = self._ly if cols is None else self._ly[np.asarray(cols)]
        return np.ascontiguousarray((lx @ ly.T) > 0, dtype=np.int8)

    def transpose(self):
        return LabelSimilarity(self._ly, self._lx)


def as_provider(s):
    """Wrap a plain array as a :class:`DenseSimilarity`; pass providers through."""
    if isinstance(s, SimilarityProvider):
        return s
    return DenseSimilarity(s)
