"""Robust online aggregation of ensemble forecasts.

One-step-ahead point forecasting with EWA, Ridge and Lasso weights and
online hyperparameter grid tuning; multi-step-ahead interval forecasting
via scenario cones; an evaluation harness with oracle comparisons and
regret-bound certification; a synthetic data generator and a CLI.
"""

from .aggregators import (
    EwaState,
    LassoState,
    RidgeState,
    aggregate,
    ewa_weights,
    lasso_weights,
    make_state,
    ridge_weights,
    run_online,
)
from .core import (
    AggregationTrace,
    Algorithm,
    EnsembleMatrix,
    ObservationSeries,
    PropertyKind,
    SeriesId,
    WeightFlavor,
    WeightVector,
    validate_pair,
)
from .evaluation import (
    BoundCheckReport,
    RegretBoundParams,
    RmseReport,
    best_convex_oracle,
    build_rmse_report,
    check_ewa_bound,
    check_ridge_bound,
    rmse,
)
from .interval import (
    ConeSlope,
    FilterResult,
    IntervalSeries,
    NoiseEstimate,
    ScenarioCone,
    build_cone,
    estimate_noise,
    ewa_interval_forecast,
    filter_models,
    ridge_interval_forecast,
)
from .synth import Regime, SynthConfig, generate, standard_bundle
from .tuning import HyperGrid, TunerState, default_grid, make_tuner

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
