"""Observed-matrix representation and Omega-restricted linear algebra.

Every vector aligned with the observation set (residuals, reshaped basis
matrices, the observed values themselves) shares one ordering: the entries
of :class:`ObservedMatrix` sorted row-major.  Because of that ordering the
entry arrays double as the ``indices``/``data`` arrays of a CSR matrix, so
the sparse views used by the power method are built without any sort.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ContractError",
    "DimensionError",
    "ObservedMatrix",
    "RankOneFactor",
    "FactorModel",
    "ResidualBuffer",
    "inner_omega",
    "norm_omega",
    "evaluate_on_omega",
    "residual",
    "predict",
]

# Omega-aligned float64 vector; kept as a bare ndarray rather than a wrapper.
ResidualBuffer = np.ndarray

_UNIT_TOL = 1e-12


class ContractError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class DimensionError(ContractError):
    """Raised when matrix or vector dimensions do not agree."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservedMatrix:
    """Sparse view of ``P_Omega(Y)``: the observed entries and their positions.

    Entries are stored 0-based, unique and sorted row-major.  Use
    :meth:`from_triplets` to build one from unsorted input.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    _indptr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(values)):
            raise DimensionError("rows, cols and values must have equal length")
        if len(rows) == 0:
            raise ContractError("an ObservedMatrix needs at least one entry")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ContractError("matrix dimensions must be positive")
        if rows.min() < 0 or rows.max() >= self.n_rows:
            raise ContractError("row index out of range")
        if cols.min() < 0 or cols.max() >= self.n_cols:
            raise ContractError("column index out of range")
        if not np.all(np.isfinite(values)):
            raise ContractError("observed values must be finite")
        key = rows * self.n_cols + cols
        step = np.diff(key)
        if np.any(step == 0):
            raise ContractError("duplicate (row, col) observations")
        if np.any(step < 0):
            raise ContractError("entries must be sorted row-major; use from_triplets")
        indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n_rows), out=indptr[1:])
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "cols", _frozen(cols))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "_indptr", _frozen(indptr))

    @classmethod
    def from_triplets(cls, rows, cols, values, shape=None) -> "ObservedMatrix":
        """Sort arbitrary-order triplets row-major and validate them.

        ``shape`` defaults to ``(max row + 1, max col + 1)``.
        Duplicated cells raise :class:`ContractError`; nothing is averaged.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if len(rows) == 0:
            raise ContractError("an ObservedMatrix needs at least one entry")
        if shape is None:
            shape = (int(rows.max()) + 1, int(cols.max()) + 1)
        order = np.lexsort((cols, rows))
        return cls(int(shape[0]), int(shape[1]), rows[order], cols[order], values[order])

    @classmethod
    def from_dense(cls, Y, mask=None) -> "ObservedMatrix":
        """Observe ``Y`` wherever ``mask`` is true (everywhere by default)."""
        Y = np.asarray(Y, dtype=np.float64)
        if mask is None:
            mask = np.ones(Y.shape, dtype=bool)
        r, c = np.nonzero(mask)
        return cls(Y.shape[0], Y.shape[1], r, c, Y[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def __len__(self):
        return self.nnz

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def with_values(self, values) -> "ObservedMatrix":
        """Same index set, new Omega-aligned values."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.nnz,):
            raise DimensionError(f"expected {self.nnz} values, got {values.shape}")
        return ObservedMatrix(self.n_rows, self.n_cols, self.rows, self.cols, values)

    def subset(self, index) -> "ObservedMatrix":
        """Entries selected by ``index`` (kept in row-major order)."""
        index = np.sort(np.asarray(index, dtype=np.int64))
        return ObservedMatrix(
            self.n_rows, self.n_cols, self.rows[index], self.cols[index], self.values[index]
        )

    def to_sparse(self, values=None) -> sp.csr_matrix:
        """CSR matrix holding ``values`` (default: the observations) on Omega."""
        data = self.values if values is None else np.asarray(values, dtype=np.float64)
        if data.shape != (self.nnz,):
            raise DimensionError(f"expected {self.nnz} values, got {data.shape}")
        return sp.csr_matrix((data, self.cols, self._indptr), shape=self.shape, copy=False)

    def to_dense(self, values=None) -> np.ndarray:
        """Dense ``P_Omega`` image; only meant for small test problems."""
        data = self.values if values is None else np.asarray(values, dtype=np.float64)
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = data
        return out

    def gather(self, dense) -> np.ndarray:
        """Omega-aligned vector of a dense matrix's entries."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.shape != self.shape:
            raise DimensionError(f"expected shape {self.shape}, got {dense.shape}")
        return dense[self.rows, self.cols]

    def rank_one_column(self, u, v) -> np.ndarray:
        """Reshaped vector of ``(u v^T)_Omega``."""
        return np.asarray(u)[self.rows] * np.asarray(v)[self.cols]


@dataclass(frozen=True)
class RankOneFactor:
    """Unit-Frobenius-norm rank-one matrix ``u v^T``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64).ravel().copy()
        v = np.asarray(self.v, dtype=np.float64).ravel().copy()
        for name, x in (("u", u), ("v", v)):
            if abs(np.linalg.norm(x) - 1.0) > _UNIT_TOL:
                raise ContractError(f"{name} must have unit Euclidean norm")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))

    def dense(self) -> np.ndarray:
        return np.outer(self.u, self.v)


class FactorModel:
    """Weighted sum of rank-one factors, ``X = sum_i theta_i u_i v_i^T``.

    Factors are held column-wise in ``U`` (n_rows x k) and ``V``
    (n_cols x k).  ``offset`` is a constant added to every prediction; it
    carries the training mean when ratings are centered and is 0 otherwise.
    """

    def __init__(self, n_rows, n_cols, U=None, V=None, weights=None, offset=0.0):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        U = np.zeros((self.n_rows, 0)) if U is None else np.asarray(U, dtype=np.float64)
        V = np.zeros((self.n_cols, 0)) if V is None else np.asarray(V, dtype=np.float64)
        weights = np.zeros(0) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
        if U.ndim != 2 or V.ndim != 2 or U.shape[0] != self.n_rows or V.shape[0] != self.n_cols:
            raise DimensionError("factor matrices do not match the model shape")
        if not (U.shape[1] == V.shape[1] == len(weights)):
            raise DimensionError("U, V and weights disagree on the rank")
        for name, M in (("u", U), ("v", V)):
            norms = np.linalg.norm(M, axis=0)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise ContractError(f"every {name} factor must have unit norm")
        self.U = _frozen(U.copy())
        self.V = _frozen(V.copy())
        self.weights = _frozen(weights.copy())
        self.offset = float(offset)

    @classmethod
    def from_factors(cls, n_rows, n_cols, factors: Sequence[RankOneFactor], weights, offset=0.0):
        if len(factors) == 0:
            return cls(n_rows, n_cols, weights=np.zeros(0), offset=offset)
        U = np.column_stack([f.u for f in factors])
        V = np.column_stack([f.v for f in factors])
        return cls(n_rows, n_cols, U, V, weights, offset)

    @property
    def rank(self) -> int:
        return len(self.weights)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def factors(self) -> list[RankOneFactor]:
        return [RankOneFactor(self.U[:, i], self.V[:, i]) for i in range(self.rank)]

    def with_weights(self, weights) -> "FactorModel":
        return FactorModel(self.n_rows, self.n_cols, self.U, self.V, weights, self.offset)

    def dense(self) -> np.ndarray:
        """Full reconstruction; use on small matrices only."""
        return (self.U * self.weights) @ self.V.T + self.offset

    def __repr__(self):
        return f"FactorModel(shape={self.shape}, rank={self.rank})"


def _check_aligned(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ContractError(f"Omega-aligned vectors differ in shape: {a.shape} vs {b.shape}")
    return a, b


def inner_omega(a, b) -> float:
    """Frobenius inner product of two Omega-aligned vectors."""
    a, b = _check_aligned(a, b)
    return float(a @ b)


def norm_omega(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(inner_omega(a, a)))


def _check_model(model: FactorModel, obs: ObservedMatrix):
    if model.shape != obs.shape:
        raise DimensionError(f"model shape {model.shape} != observed shape {obs.shape}")


# Bounds the k x chunk temporary of evaluate_on_omega to ~32 MB.
_EVAL_CHUNK = 1 << 22


def evaluate_on_omega(model: FactorModel, obs: ObservedMatrix) -> np.ndarray:
    """Values of the model (without ``offset``) on the observed cells.

    Cost is O(k |Omega|); work is done in fixed-size chunks so the result
    does not depend on how the entries are partitioned.
    """
    _check_model(model, obs)
    out = np.zeros(obs.nnz)
    if model.rank == 0:
        return out
    Uw = model.U * model.weights
    step = max(1, _EVAL_CHUNK // max(1, model.rank))
    for start in range(0, obs.nnz, step):
        sl = slice(start, start + step)
        out[sl] = np.einsum("ij,ij->i", Uw[obs.rows[sl]], model.V[obs.cols[sl]])
    return out


def residual(obs: ObservedMatrix, model: FactorModel) -> np.ndarray:
    """``R = Y_Omega - X_Omega`` as an Omega-aligned vector."""
    return obs.values - evaluate_on_omega(model, obs)


def predict(model: FactorModel, queries: Iterable[tuple[int, int]] | np.ndarray) -> np.ndarray:
    """Model values (including ``offset``) at arbitrary ``(row, col)`` cells."""
    q = np.asarray(queries, dtype=np.int64)
    if q.size == 0:
        return np.zeros(0)
    q = q.reshape(-1, 2)
    r, c = q[:, 0], q[:, 1]
    if r.min() < 0 or r.max() >= model.n_rows or c.min() < 0 or c.max() >= model.n_cols:
        raise ContractError("query index out of bounds")
    if model.rank == 0:
        return np.full(len(r), model.offset)
    return np.einsum("ij,ij->i", model.U[r] * model.weights, model.V[c]) + model.offset
