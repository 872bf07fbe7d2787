"""Rank-one matrix pursuit for matrix completion.

Three variants share one pursuit loop and differ only in how the weights
are refit once the new basis matrix ``M_k = u_k v_k^T`` is known:

* ``or1mp``  -- least squares over all pursued bases (orthogonal refit),
  backed by an incrementally maintained inverse Gram matrix.
* ``eor1mp`` -- two-variable least squares over the previous estimate and
  the new basis; older weights are rescaled by a single factor.
* ``fr1mp``  -- the new basis gets its own 1-D optimal weight; nothing is
  revisited.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .core import ContractError, DimensionError, FactorModel, ObservedMatrix
from .svdtop import PowerConfig, SingularPair, ZeroResidual, top_singular_pair

__all__ = [
    "DegenerateBasis",
    "SolverConfig",
    "GramState",
    "IterationRecord",
    "IterationState",
    "PursuitTrace",
    "solve_weights_full",
    "solve_weights_economic",
    "or1mp",
    "eor1mp",
    "fr1mp",
    "SOLVERS",
    "solve",
]

SCHUR_TOL = 1e-12
RIDGE = 1e-12
ZERO_RESIDUAL = 1e-13

PairFinder = Callable[[object, np.random.Generator], SingularPair]


class DegenerateBasis(ArithmeticError):
    """The pursued basis lost full column rank on Omega."""


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules and power-method settings for one pursuit run.

    The run ends at ``rank_budget`` iterations or once
    ``|R_k| <= eps * |Y|_Omega``, whichever comes first.  ``power.seed``
    seeds the fresh random start of every power-method call.  With
    ``trace=False`` no per-iteration records are kept.
    """

    rank_budget: Optional[int] = 10
    eps: float = 0.0
    power: PowerConfig = field(default_factory=PowerConfig)
    trace: bool = True

    def __post_init__(self):
        if self.rank_budget is not None and self.rank_budget < 1:
            raise ContractError("rank_budget must be >= 1")
        if self.eps < 0:
            raise ContractError("eps must be non-negative")
        if self.rank_budget is None and self.eps <= 0:
            raise ContractError("need a rank budget or a positive eps")


class GramState:
    """Normal-equation state for the orthogonal refit.

    Holds the reshaped basis vectors ``m_1..m_k`` column-wise, their Gram
    matrix, its inverse (updated by blockwise inversion) and ``M^T y``.
    """

    def __init__(self, length: int, capacity: int = 16):
        self.length = int(length)
        self._basis = np.empty((self.length, max(1, capacity)))
        self.k = 0
        self.gram = np.zeros((0, 0))
        self.inv_gram = np.zeros((0, 0))
        self.mty = np.zeros(0)
        self.fallbacks = 0

    @property
    def basis(self) -> np.ndarray:
        return self._basis[:, : self.k]

    def _push(self, column):
        if self.k == self._basis.shape[1]:
            grown = np.empty((self.length, 2 * self._basis.shape[1]))
            grown[:, : self.k] = self._basis[:, : self.k]
            self._basis = grown
        self._basis[:, self.k] = column
        self.k += 1

    def add_column(self, column, y) -> np.ndarray:
        """Append ``column`` and return the refit weights ``theta``."""
        column = np.asarray(column, dtype=np.float64)
        if column.shape != (self.length,) or np.shape(y) != (self.length,):
            raise DimensionError("column and y must be Omega-aligned")
        if not np.all(np.isfinite(column)):
            raise DegenerateBasis("basis column has non-finite entries")
        b = self.basis.T @ column
        c = float(column @ column)
        gram = np.empty((self.k + 1, self.k + 1))
        gram[: self.k, : self.k] = self.gram
        gram[: self.k, self.k] = b
        gram[self.k, : self.k] = b
        gram[self.k, self.k] = c

        A = self.inv_gram
        Ab = A @ b
        schur = c - float(b @ Ab)
        if schur > SCHUR_TOL:
            d = 1.0 / schur
            inv = np.empty_like(gram)
            inv[: self.k, : self.k] = A + d * np.outer(Ab, Ab)
            inv[: self.k, self.k] = -d * Ab
            inv[self.k, : self.k] = -d * Ab
            inv[self.k, self.k] = d
        else:
            inv = self._ridge_inverse(gram)
        self._push(column)
        self.gram = gram
        self.inv_gram = inv
        self.mty = np.append(self.mty, float(column @ y))
        return self.weights()

    def _ridge_inverse(self, gram):
        self.fallbacks += 1
        try:
            cf = sla.cho_factor(gram + RIDGE * np.eye(len(gram)))
        except np.linalg.LinAlgError as exc:
            raise DegenerateBasis("Gram matrix is singular even with ridge") from exc
        return sla.cho_solve(cf, np.eye(len(gram)))

    def weights(self) -> np.ndarray:
        theta = self.inv_gram @ self.mty
        # one refinement sweep against the exact Gram matrix
        return theta + self.inv_gram @ (self.mty - self.gram @ theta)

    def consistency_error(self) -> float:
        """Relative deviation of ``inv_gram`` from the inverse of the explicit Gram matrix."""
        if self.k == 0:
            return 0.0
        G = self.basis.T @ self.basis
        E = self.inv_gram @ G - np.eye(self.k)
        return float(np.linalg.norm(E) / np.sqrt(self.k))


def solve_weights_full(state: GramState, new_column, y):
    """Least-squares weights over all basis columns after adding ``new_column``.

    Mutates and returns ``state`` alongside the weights.
    """
    theta = state.add_column(new_column, y)
    return theta, state


def solve_weights_economic(x_prev, column, y) -> np.ndarray:
    """``argmin_a |a1 x_prev + a2 column - y|`` via the 2x2 normal equations.

    With ``x_prev`` all zero (first iteration) only ``a2`` is solved for and
    ``a1`` is returned as 1.
    """
    x_prev = np.asarray(x_prev, dtype=np.float64)
    column = np.asarray(column, dtype=np.float64)
    mm = float(column @ column)
    my = float(column @ y)
    xx = float(x_prev @ x_prev)
    if xx == 0.0:
        if mm == 0.0:
            raise DegenerateBasis("pursued basis vanishes on Omega")
        return np.array([1.0, my / mm])
    xm = float(x_prev @ column)
    xy = float(x_prev @ y)
    A = np.array([[xx, xm], [xm, mm]])
    rhs = np.array([xy, my])
    if xx * mm - xm * xm <= SCHUR_TOL * xx * mm:
        A = A + RIDGE * np.eye(2)
    try:
        return sla.cho_solve(sla.cho_factor(A), rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBasis("2x2 weight system is singular") from exc


@dataclass
class IterationRecord:
    k: int
    residual_norm: float
    sigma: float
    power_iters: int
    power_converged: bool
    diagnostic: float
    residual_norm_after: float
    seconds: float = 0.0


@dataclass
class PursuitTrace:
    """Per-iteration history of one pursuit run."""

    solver: str
    n_rows: int
    n_cols: int
    n_obs: int
    obs_norm: float
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def residual_norms(self) -> np.ndarray:
        """``|R_1|, ..., |R_{K+1}|`` for a run of ``K`` iterations."""
        if not self.records:
            return np.array([self.obs_norm])
        return np.array([r.residual_norm for r in self.records] + [self.records[-1].residual_norm_after])

    @property
    def diagnostics(self) -> np.ndarray:
        return np.array([r.diagnostic for r in self.records])

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.records))

    def to_dict(self, timing: bool = False) -> dict:
        records = []
        for r in self.records:
            d = asdict(r)
            if not timing:
                d.pop("seconds")
            records.append(d)
        return {
            "solver": self.solver,
            "shape": [self.n_rows, self.n_cols],
            "n_obs": self.n_obs,
            "obs_norm": self.obs_norm,
            "min_dim": min(self.n_rows, self.n_cols),
            "stop_reason": self.stop_reason,
            "records": records,
        }


@dataclass
class IterationState:
    """Snapshot handed to a pursuit callback after iteration ``k``."""

    k: int
    pair: SingularPair
    column: np.ndarray
    residual_before: np.ndarray
    residual: np.ndarray
    estimate: np.ndarray
    weights: np.ndarray
    gram: Optional[GramState] = None
    us: list = field(default_factory=list, repr=False)
    vs: list = field(default_factory=list, repr=False)

    def model(self) -> FactorModel:
        """Estimate after this iteration as a :class:`FactorModel`."""
        n, m = len(self.us[0]), len(self.vs[0])
        return FactorModel(n, m, np.column_stack(self.us[: self.k]), np.column_stack(self.vs[: self.k]),
                           self.weights)


class _FullRefit:
    name = "or1mp"

    def __init__(self, obs):
        self.y = obs.values
        self.gram = GramState(obs.nnz)

    def __call__(self, column, weights, estimate, r_before):
        theta, _ = solve_weights_full(self.gram, column, self.y)
        return theta, self.gram.basis @ theta


class _EconomicRefit:
    name = "eor1mp"
    gram = None

    def __init__(self, obs):
        self.y = obs.values

    def __call__(self, column, weights, estimate, r_before):
        a1, a2 = solve_weights_economic(estimate, column, self.y)
        return np.append(weights * a1, a2), a1 * estimate + a2 * column


class _ForwardRefit:
    name = "fr1mp"
    gram = None

    def __init__(self, obs):
        pass

    def __call__(self, column, weights, estimate, r_before):
        mm = float(column @ column)
        if mm == 0.0:
            raise DegenerateBasis("pursued basis vanishes on Omega")
        theta = float(r_before @ column) / mm
        return np.append(weights, theta), estimate + theta * column


def _pursue(refit, obs: ObservedMatrix, cfg: SolverConfig, pair_finder=None, callback=None):
    if pair_finder is None:
        def pair_finder(R, rng):
            return top_singular_pair(R, cfg.power, rng)

    rng = np.random.default_rng(cfg.power.seed)
    y = obs.values
    y_norm = float(np.linalg.norm(y))
    trace = PursuitTrace(refit.name, obs.n_rows, obs.n_cols, obs.nnz, y_norm)
    us, vs = [], []
    weights = np.zeros(0)
    estimate = np.zeros(obs.nnz)
    R = y.copy()
    r_norm = y_norm
    budget = cfg.rank_budget if cfg.rank_budget is not None else obs.nnz
    k = 0
    while True:
        if k >= budget:
            trace.stop_reason = "rank_budget"
            break
        if r_norm <= ZERO_RESIDUAL * y_norm:
            trace.stop_reason = "zero_residual"
            break
        if cfg.eps > 0 and r_norm <= cfg.eps * y_norm:
            trace.stop_reason = "tolerance"
            break
        t0 = time.perf_counter()
        try:
            pair = pair_finder(obs.to_sparse(R), rng)
        except ZeroResidual:
            trace.stop_reason = "zero_residual"
            break
        column = obs.rank_one_column(pair.u, pair.v)
        try:
            new_weights, new_estimate = refit(column, weights, estimate, R)
        except DegenerateBasis:
            trace.stop_reason = "degenerate_basis"
            break
        k += 1
        weights, estimate = new_weights, new_estimate
        us.append(pair.u)
        vs.append(pair.v)
        R_next = y - estimate
        r_next = float(np.linalg.norm(R_next))
        elapsed = time.perf_counter() - t0
        if cfg.trace:
            diag = r_norm**2 / pair.sigma**2 if pair.sigma > 0 else float("inf")
            trace.records.append(
                IterationRecord(k, r_norm, pair.sigma, pair.n_iter, pair.converged, diag, r_next, elapsed)
            )
        if callback is not None:
            callback(IterationState(k, pair, column, R, R_next, estimate, weights, refit.gram, us, vs))
        R, r_norm = R_next, r_next

    if us:
        model = FactorModel(obs.n_rows, obs.n_cols, np.column_stack(us), np.column_stack(vs), weights)
    else:
        model = FactorModel(obs.n_rows, obs.n_cols)
    return model, trace


def or1mp(obs: ObservedMatrix, cfg: SolverConfig | None = None, *, pair_finder=None, callback=None):
    """Orthogonal rank-one matrix pursuit with a full least-squares refit.

    Storage grows as O(k |Omega|) since every reshaped basis is kept.

    Parameters
    ----------
    obs : ObservedMatrix
        Observed entries ``Y_Omega``.
    cfg : SolverConfig
        Rank budget, residual tolerance and power-method settings.
    pair_finder : callable, optional
        ``pair_finder(R, rng) -> SingularPair`` replacing the power method,
        e.g. an exact SVD for analysis runs.
    callback : callable, optional
        Called with an :class:`IterationState` after every iteration.

    Returns
    -------
    (FactorModel, PursuitTrace)
    """
    return _pursue(_FullRefit(obs), obs, cfg or SolverConfig(), pair_finder, callback)


def eor1mp(obs: ObservedMatrix, cfg: SolverConfig | None = None, *, pair_finder=None, callback=None):
    """Economic variant: refit only the pair (previous estimate, new basis).

    Takes the same arguments as :func:`or1mp`; extra storage is O(|Omega|).
    """
    return _pursue(_EconomicRefit(obs), obs, cfg or SolverConfig(), pair_finder, callback)


def fr1mp(obs: ObservedMatrix, cfg: SolverConfig | None = None, *, pair_finder=None, callback=None):
    """Forward pursuit: weight each new basis by ``<R_k, M_k> / |M_k|^2_Omega``."""
    return _pursue(_ForwardRefit(obs), obs, cfg or SolverConfig(), pair_finder, callback)


SOLVERS = {"or1mp": or1mp, "eor1mp": eor1mp, "fr1mp": fr1mp}


def solve(name: str, obs: ObservedMatrix, cfg: SolverConfig | None = None, **kwargs):
    try:
        fn = SOLVERS[name]
    except KeyError:
        raise ContractError(f"unknown solver {name!r}; choose from {sorted(SOLVERS)}") from None
    return fn(obs, cfg, **kwargs)
