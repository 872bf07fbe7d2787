"""Matrix sensing: recover a low-rank matrix from ``b = A vec(Y)``.

Matrices are vectorized column-major.  The measurement operator is lifted
back to matrix space through ``A^+ = A^T (A A^T)^{-1}``; ``lift(apply(X))``
is the orthogonal projection of ``X`` onto the row space of ``A``.
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .core import ContractError, DimensionError, FactorModel
from .solvers import (
    DegenerateBasis,
    GramState,
    IterationRecord,
    IterationState,
    PursuitTrace,
    SolverConfig,
    ZERO_RESIDUAL,
)
from .svdtop import ZeroResidual, top_singular_pair

__all__ = [
    "CapacityError",
    "SensingOperator",
    "vec",
    "mat",
    "apply",
    "lift",
    "r1mp4ms",
    "gaussian_operator",
    "save_operator",
    "load_operator",
]

MAX_CELLS = 20_000
MAX_MEASUREMENTS = 10_000
# d * mn ceiling for the dense operator plus its pseudo-inverse (~800 MB in float64)
MAX_ELEMENTS = 50_000_000


class CapacityError(ContractError):
    """The operator exceeds the desk-scale memory caps."""


def vec(X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64).ravel(order="F")


def mat(x, shape) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(shape, order="F")


class SensingOperator:
    """Dense ``d x (n_rows * n_cols)`` measurement matrix with cached pseudo-inverse.

    ``A`` must have full row rank; a singular ``A A^T`` raises
    :class:`ContractError`.
    """

    def __init__(self, n_rows, n_cols, A, max_elements=MAX_ELEMENTS):
        self.n_rows, self.n_cols = int(n_rows), int(n_cols)
        A = np.array(A, dtype=np.float64, ndmin=2)
        cells = self.n_rows * self.n_cols
        if A.shape[1] != cells:
            raise DimensionError(f"A has {A.shape[1]} columns, expected {cells}")
        d = A.shape[0]
        if cells > MAX_CELLS or d > MAX_MEASUREMENTS or d * cells > max_elements:
            raise CapacityError(
                f"operator {d}x{cells} exceeds caps (mn <= {MAX_CELLS}, d <= {MAX_MEASUREMENTS}, "
                f"d*mn <= {max_elements})"
            )
        if d > cells:
            raise ContractError("more measurements than unknowns; A cannot have full row rank")
        G = A @ A.T
        try:
            cf = sla.cho_factor(G)
        except np.linalg.LinAlgError as exc:
            raise ContractError("A is not of full row rank") from exc
        # Cholesky can succeed on a round-off-positive singular matrix; test the pivots
        pivots = np.abs(np.diag(cf[0])) ** 2
        if pivots.min() <= d * np.finfo(float).eps * np.max(np.diag(G)):
            raise ContractError("A is not of full row rank (numerically singular A A^T)")
        self.A = A
        self.A.setflags(write=False)
        self.pinv = sla.cho_solve(cf, A).T
        self.pinv.setflags(write=False)
        probe = np.random.default_rng(0).standard_normal((d, 3))
        if np.linalg.norm(A @ (self.pinv @ probe) - probe) > 1e-8 * np.linalg.norm(probe):
            raise ContractError("A is not of full row rank (A A^+ deviates from identity)")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def n_measurements(self) -> int:
        return self.A.shape[0]

    def identity_error(self) -> float:
        """``|A A^+ - I|_F / sqrt(d)``; should be at round-off level."""
        d = self.n_measurements
        return float(np.linalg.norm(self.A @ self.pinv - np.eye(d)) / np.sqrt(d))


def apply(op: SensingOperator, X) -> np.ndarray:
    """Measurements ``A vec(X)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape != op.shape:
        raise DimensionError(f"expected a {op.shape} matrix, got {X.shape}")
    return op.A @ vec(X)


def lift(op: SensingOperator, b) -> np.ndarray:
    """``mat(A^+ b)``, a matrix whose measurements are exactly ``b``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (op.n_measurements,):
        raise DimensionError(f"expected {op.n_measurements} measurements, got {b.shape}")
    return mat(op.pinv @ b, op.shape)


def _project(op, x):
    return op.pinv @ (op.A @ x)


def r1mp4ms(op: SensingOperator, b, cfg: SolverConfig | None = None, *, pair_finder=None, callback=None):
    """Rank-one matrix pursuit for matrix sensing.

    Starting from ``R_0 = lift(b)``, each iteration takes the top singular
    pair of the dense residual, then refits every weight by least squares of
    ``R_0`` on the projected bases ``lift(apply(M_i))``.  Returns the model
    ``M(theta)`` and a trace whose norms are Frobenius norms in lifted space.
    """
    cfg = cfg or SolverConfig()
    if pair_finder is None:
        def pair_finder(R, rng):
            return top_singular_pair(R, cfg.power, rng)

    rng = np.random.default_rng(cfg.power.seed)
    r0 = vec(lift(op, b))
    r0_norm = float(np.linalg.norm(r0))
    n, m = op.shape
    trace = PursuitTrace("r1mp4ms", n, m, op.n_measurements, r0_norm)
    gram = GramState(n * m)
    us, vs = [], []
    weights = np.zeros(0)
    estimate = np.zeros(n * m)
    R = r0.copy()
    r_norm = r0_norm
    budget = cfg.rank_budget if cfg.rank_budget is not None else op.n_measurements
    k = 0
    while True:
        if k >= budget:
            trace.stop_reason = "rank_budget"
            break
        if r_norm <= ZERO_RESIDUAL * max(r0_norm, np.finfo(float).tiny):
            trace.stop_reason = "zero_residual"
            break
        if cfg.eps > 0 and r_norm <= cfg.eps * r0_norm:
            trace.stop_reason = "tolerance"
            break
        t0 = time.perf_counter()
        try:
            pair = pair_finder(mat(R, op.shape), rng)
        except ZeroResidual:
            trace.stop_reason = "zero_residual"
            break
        column = _project(op, vec(np.outer(pair.u, pair.v)))
        try:
            weights = gram.add_column(column, r0)
        except DegenerateBasis:
            trace.stop_reason = "degenerate_basis"
            break
        k += 1
        us.append(pair.u)
        vs.append(pair.v)
        estimate = gram.basis @ weights
        R_next = r0 - estimate
        r_next = float(np.linalg.norm(R_next))
        if cfg.trace:
            diag = r_norm**2 / pair.sigma**2 if pair.sigma > 0 else float("inf")
            trace.records.append(
                IterationRecord(k, r_norm, pair.sigma, pair.n_iter, pair.converged, diag, r_next,
                                time.perf_counter() - t0)
            )
        if callback is not None:
            callback(IterationState(k, pair, column, R, R_next, estimate, weights, gram, us, vs))
        R, r_norm = R_next, r_next

    if us:
        model = FactorModel(n, m, np.column_stack(us), np.column_stack(vs), weights)
    else:
        model = FactorModel(n, m)
    return model, trace


def gaussian_operator(n_rows, n_cols, d, rng, max_elements=MAX_ELEMENTS) -> SensingOperator:
    """Operator with i.i.d. ``N(0, 1/d)`` entries."""
    if n_rows * n_cols > MAX_CELLS or d > MAX_MEASUREMENTS or d * n_rows * n_cols > max_elements:
        raise CapacityError(f"{d} x {n_rows * n_cols} operator exceeds the memory caps")
    A = rng.standard_normal((d, n_rows * n_cols)) / np.sqrt(d)
    return SensingOperator(n_rows, n_cols, A, max_elements=max_elements)


_MAGIC = "r1mp-operator 1"


def save_operator(op: SensingOperator, path):
    """Text container: magic line, ``shape n m``, ``measurements d``, then A row by row."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"{_MAGIC}\nshape {op.n_rows} {op.n_cols}\nmeasurements {op.n_measurements}\n")
        for row in op.A:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_operator(path, max_elements=MAX_ELEMENTS) -> SensingOperator:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ContractError(f"{path}: not an operator file")
    try:
        _, n, m = lines[1].split()
        _, d = lines[2].split()
        n, m, d = int(n), int(m), int(d)
        A = np.array([[float(x) for x in ln.split()] for ln in lines[3 : 3 + d]])
    except (ValueError, IndexError) as exc:
        raise ContractError(f"{path}: malformed operator file") from exc
    if A.shape != (d, n * m):
        raise ContractError(f"{path}: expected {d} rows of {n * m} values")
    return SensingOperator(n, m, A, max_elements=max_elements)
