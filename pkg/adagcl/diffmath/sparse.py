"""
Row-compressed sparse matrices used as constant operands of spmm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from adagcl.exceptions import ShapeError


@dataclass(frozen=True)
class SparseMatrix:
    """
    CSR matrix with strictly ascending column indices within each row.

    Attributes:
        csr: The canonical scipy CSR matrix
    """

    csr: sp.csr_matrix
    _transpose: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        csr = self.csr
        if not sp.isspmatrix_csr(csr):
            csr = sp.csr_matrix(csr)
        csr = csr.copy()
        csr.sum_duplicates()
        csr.sort_indices()
        object.__setattr__(self, "csr", csr)

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size and (rows.max() >= shape[0] or cols.max() >= shape[1] or rows.min() < 0 or cols.min() < 0):
            raise ShapeError(f"coordinates out of range for shape {shape}")
        matrix = sp.coo_matrix((np.asarray(values, dtype=np.float64), (rows, cols)), shape=shape)
        return cls(matrix.tocsr())

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(sp.identity(n, dtype=np.float64, format="csr"))

    @property
    def rows(self) -> int:
        return self.csr.shape[0]

    @property
    def cols(self) -> int:
        return self.csr.shape[1]

    @property
    def shape(self) -> tuple:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def indptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def values(self) -> np.ndarray:
        return self.csr.data

    @property
    def T(self) -> "SparseMatrix":
        """Cached transpose, itself in canonical CSR form."""
        if not self._transpose:
            self._transpose.append(SparseMatrix(self.csr.T.tocsr()))
        return self._transpose[0]

    def dot(self, dense: np.ndarray) -> np.ndarray:
        """Dense product that keeps the dtype of ``dense``."""
        if dense.shape[0] != self.cols:
            raise ShapeError(f"spmm shape mismatch: {self.shape} x {dense.shape}")
        return np.asarray(self.csr @ dense, dtype=dense.dtype)

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()
