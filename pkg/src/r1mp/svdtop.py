"""Top singular pair of a (sparse or dense) matrix by power iteration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractError

__all__ = ["PowerConfig", "SingularPair", "ZeroResidual", "top_singular_pair", "dense_top_pair"]


class ZeroResidual(Exception):
    """The matrix handed to the power method is identically zero."""


@dataclass(frozen=True)
class PowerConfig:
    """Power-method settings.

    Iteration stops once the relative change of the singular value estimate
    drops to ``rel_tol`` or after ``max_iters`` sweeps.  ``seed`` is only
    used when no generator is passed to :func:`top_singular_pair`.
    """

    max_iters: int = 30
    rel_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ContractError("max_iters must be >= 1")
        if not (0.0 <= self.rel_tol < 1.0):
            raise ContractError("rel_tol must lie in [0, 1)")


@dataclass(frozen=True)
class SingularPair:
    u: np.ndarray
    v: np.ndarray
    sigma: float
    n_iter: int
    converged: bool
    # sigma estimate after each sweep
    history: tuple[float, ...] = ()


def _canonical_sign(u, v):
    nz = np.flatnonzero(u)
    if len(nz) and u[nz[0]] < 0:
        return -u, -v
    return u, v


def top_singular_pair(R, cfg: PowerConfig | None = None, rng=None) -> SingularPair:
    """Dominant singular triple ``(u, v, sigma)`` of ``R``.

    ``R`` is anything supporting ``R @ x`` and ``R.T @ y`` (ndarray, scipy
    sparse matrix).  Each sweep is ``u <- Rv/|Rv|``, ``v <- R^T u/|R^T u|``
    with ``sigma = u^T R v = |R^T u|``; the estimate is non-decreasing.

    Raises :class:`ZeroResidual` if ``R`` has no nonzero entry.  Running out
    of sweeps is not an error: the last iterate comes back with
    ``converged=False``.
    """
    cfg = PowerConfig() if cfg is None else cfg
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n, m = R.shape
    if n < 1 or m < 1:
        raise ContractError("matrix dimensions must be positive")
    Rt = R.T

    data = R.data if hasattr(R, "nnz") else R
    if not np.any(data):
        raise ZeroResidual("matrix is identically zero")

    for _ in range(8):
        v = rng.standard_normal(m)
        v /= np.linalg.norm(v)
        Rv = np.asarray(R @ v).ravel()
        nrm = np.linalg.norm(Rv)
        if nrm > 0.0:
            break
    else:
        raise ZeroResidual("power method could not leave the null space")

    history = []
    sigma_prev = None
    converged = False
    t = 0
    while t < cfg.max_iters:
        t += 1
        u = Rv / nrm
        Rtu = np.asarray(Rt @ u).ravel()
        sigma = float(np.linalg.norm(Rtu))
        if sigma == 0.0:
            raise ZeroResidual("matrix is identically zero")
        v = Rtu / sigma
        history.append(sigma)
        if sigma_prev is not None and abs(sigma - sigma_prev) <= cfg.rel_tol * sigma:
            converged = True
            break
        sigma_prev = sigma
        if t < cfg.max_iters:
            Rv = np.asarray(R @ v).ravel()
            nrm = np.linalg.norm(Rv)
    u, v = _canonical_sign(u, v)
    return SingularPair(u, v, sigma, t, converged, tuple(history))


def dense_top_pair(R) -> SingularPair:
    """Exact top singular pair from a dense LAPACK SVD; a test oracle."""
    D = R.toarray() if hasattr(R, "toarray") else np.asarray(R, dtype=np.float64)
    if not np.any(D):
        raise ZeroResidual("matrix is identically zero")
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    u, v = _canonical_sign(U[:, 0].copy(), Vt[0].copy())
    # report u^T R v of the returned pair rather than s[0]
    sigma = float(u @ (D @ v))
    return SingularPair(u, v, sigma, 0, True, (sigma,))
