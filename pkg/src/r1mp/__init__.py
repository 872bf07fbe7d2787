"""Rank-one matrix pursuit for matrix completion and matrix sensing."""

__version__ = "0.1.0"

from .core import (
    ContractError,
    DimensionError,
    FactorModel,
    ObservedMatrix,
    RankOneFactor,
    evaluate_on_omega,
    inner_omega,
    norm_omega,
    predict,
    residual,
)
from .solvers import (
    DegenerateBasis,
    GramState,
    PursuitTrace,
    SolverConfig,
    eor1mp,
    fr1mp,
    or1mp,
    solve,
)
from .svdtop import PowerConfig, SingularPair, ZeroResidual, top_singular_pair
from .sensing import CapacityError, SensingOperator, r1mp4ms
from .metrics import EvalReport, psnr, rmse

__all__ = [
    "ContractError", "DimensionError", "FactorModel", "ObservedMatrix", "RankOneFactor",
    "evaluate_on_omega", "inner_omega", "norm_omega", "predict", "residual",
    "DegenerateBasis", "GramState", "PursuitTrace", "SolverConfig", "eor1mp", "fr1mp",
    "or1mp", "solve", "PowerConfig", "SingularPair", "ZeroResidual", "top_singular_pair",
    "CapacityError", "SensingOperator", "r1mp4ms", "EvalReport", "psnr", "rmse",
]
