"""Evaluation metrics and convergence-rate summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, DimensionError

__all__ = [
    "EvalReport",
    "rmse",
    "psnr",
    "contraction_bound",
    "contraction_ratios",
    "json_float",
]


def rmse(predictions, truth) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ContractError("rmse of an empty set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def psnr(reconstruction, reference, peak: float = 255.0) -> float:
    """``10 log10(peak^2 / MSE)`` over every pixel; ``inf`` for an exact match.

    ``reference`` may be a :class:`~r1mp.dataio.GrayImage` or an array.
    """
    ref = np.asarray(getattr(reference, "pixels", reference), dtype=np.float64)
    rec = np.asarray(getattr(reconstruction, "pixels", reconstruction), dtype=np.float64)
    if rec.shape != ref.shape:
        raise DimensionError(f"image shapes differ: {rec.shape} vs {ref.shape}")
    mse = float(np.mean((rec - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def contraction_bound(min_dim: int, q: float = 1.0) -> float:
    """Per-step residual ratio guaranteed by the linear rate, ``sqrt(1 - q^2/min_dim)``."""
    if min_dim < 1 or not (0.0 < q <= 1.0):
        raise ContractError("need min_dim >= 1 and 0 < q <= 1")
    return math.sqrt(1.0 - q * q / min_dim)


def contraction_ratios(trace):
    """Ratios ``|R_{k+1}| / |R_k|`` of a pursuit trace, and their maximum."""
    if len(trace.records) < 1:
        raise ContractError("trace has no completed iteration")
    ratios = np.array(
        [r.residual_norm_after / r.residual_norm if r.residual_norm > 0 else 0.0 for r in trace.records]
    )
    return ratios, float(ratios.max())


def json_float(x):
    """JSON-safe float: infinities become the strings ``"inf"``/``"-inf"``."""
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


@dataclass
class EvalReport:
    rmse: float | None = None
    psnr: float | None = None
    ratios: list[float] = field(default_factory=list)
    bound: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_trace(cls, trace, **kwargs) -> "EvalReport":
        rep = cls(**kwargs)
        if trace.records:
            rep.ratios = contraction_ratios(trace)[0].tolist()
        rep.bound = contraction_bound(min(trace.n_rows, trace.n_cols))
        return rep

    @property
    def max_ratio(self) -> float | None:
        return max(self.ratios) if self.ratios else None

    def to_dict(self) -> dict:
        out = {
            "rmse": json_float(self.rmse),
            "psnr": json_float(self.psnr),
            "contraction_ratios": [json_float(r) for r in self.ratios],
            "max_ratio": json_float(self.max_ratio),
            "theoretical_bound": json_float(self.bound),
        }
        out.update({k: json_float(v) if isinstance(v, float) else v for k, v in self.extra.items()})
        return out
