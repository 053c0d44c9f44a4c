"""Evaluation protocol and certification of the regret guarantees.

RMSEs are computed after discarding a burn-in prefix (by default the
first quarter of the steps, rounded down) so that the algorithms are not
penalized for their cold start. Two oracles put the achieved RMSE in
context: the best single model, and the best constant convex combination
of the models over the evaluated window.

The bound checks verify, on a finished trace, the guarantee

    (1/T) sum_t (y_hat_t - y_t)^2  <=  eps_T + inf over the reference set
                                       of the comparator's average loss,

with the reference set and eps_T specific to each algorithm: the
single-model vertices for EWA, a Euclidean ball of radius V >= 1 for
Ridge. A violation means a defect in the aggregation code, never in the
data, and is raised as BoundViolated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import (
    AggregationTrace,
    Algorithm,
    EnsembleMatrix,
    ObservationSeries,
    SeriesId,
    WeightFlavor,
    WeightVector,
)
from .errors import BoundViolated, NoConvergence

CONVEX_ORACLE_MAX_ITER = 50_000
CONVEX_ORACLE_REL_TOL = 1e-12


def default_burn_in(n_steps: int) -> int:
    """First quarter of the steps, rounded down."""
    return n_steps // 4


def rmse(forecasts, obs: ObservationSeries, burn_in: int | None = None) -> float:
    """Root mean-square error over steps burn_in+1 .. T.

    ``forecasts`` may be an AggregationTrace, a model trajectory or any
    array of per-step forecasts aligned with the observations.
    """
    if isinstance(forecasts, AggregationTrace):
        forecasts = forecasts.forecasts
    forecasts = np.asarray(forecasts, dtype=float)
    y = obs.values
    if burn_in is None:
        burn_in = default_burn_in(len(y))
    if not 0 <= burn_in < len(y):
        raise ValueError(f"burn_in {burn_in} out of range for {len(y)} steps")
    err = forecasts[burn_in:] - y[burn_in:]
    return float(np.sqrt(np.mean(err ** 2)))


# ---------------------------------------------------------------------------
# best convex combination oracle
# ---------------------------------------------------------------------------

def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum w = 1}."""
    n = len(v)
    u = np.sort(v)[::-1]
    css = (np.cumsum(u) - 1.0) / np.arange(1, n + 1)
    k = np.nonzero(u > css)[0][-1]
    return np.maximum(v - css[k], 0.0)


def best_convex_oracle(obs: ObservationSeries, ens: EnsembleMatrix,
                       burn_in: int | None = None):
    """Minimize the evaluated-window RMSE over convex weights.

    Projected gradient descent on the (convex quadratic) mean squared
    error with exact simplex projection. Returns (WeightVector, rmse).
    The returned point is certified by first-order optimality: no vertex
    direction improves the objective beyond rounding tolerance.
    """
    if burn_in is None:
        burn_in = default_burn_in(obs.n_steps)
    x = ens.values[:, burn_in:].T  # (n_eval, N) design
    y = obs.values[burn_in:]
    n_eval, n_models = x.shape
    if n_models == 1:
        w = np.array([1.0])
        return (WeightVector(w, WeightFlavor.CONVEX, Algorithm.ORACLE, 0.0, 0),
                rmse(x[:, 0], obs, burn_in))

    xtx = x.T @ x / n_eval
    xty = x.T @ y / n_eval
    ysq = float(y @ y) / n_eval
    lip = 2.0 * float(np.linalg.eigvalsh(xtx)[-1])
    step = 1.0 / lip if lip > 0 else 1.0

    def objective(w):
        return float(w @ xtx @ w - 2.0 * w @ xty + ysq)

    w = np.full(n_models, 1.0 / n_models)
    obj = objective(w)
    for _ in range(CONVEX_ORACLE_MAX_ITER):
        grad = 2.0 * (xtx @ w - xty)
        w_new = project_to_simplex(w - step * grad)
        obj_new = objective(w_new)
        done = obj - obj_new < CONVEX_ORACLE_REL_TOL * (1.0 + abs(obj))
        w, obj = w_new, obj_new
        if done:
            break
    else:
        gap = convex_optimality_gap(w, xtx, xty)
        raise NoConvergence(
            f"convex oracle did not converge in {CONVEX_ORACLE_MAX_ITER} iterations",
            residual=gap)

    mse = max(obj, 0.0)  # rounding can push a perfect fit slightly negative
    wvec = WeightVector(w, WeightFlavor.CONVEX, Algorithm.ORACLE, 0.0, 0)
    return wvec, float(np.sqrt(mse))


def convex_optimality_gap(w, xtx, xty) -> float:
    """Largest improvement rate toward a vertex (0 at an optimum)."""
    grad = 2.0 * (xtx @ w - xty)
    return float(grad @ w - grad.min())


@dataclass(frozen=True)
class RmseReport:
    """Per-series accuracy summary with oracle context."""

    series: SeriesId
    burn_in: int
    rmse_algorithm: float
    rmse_best_model: float
    best_model_index: int
    rmse_best_convex: float
    convex_oracle_weights: WeightVector

    def __post_init__(self):
        if self.rmse_best_convex > self.rmse_best_model + 1e-9:
            raise ValueError(
                "best convex RMSE exceeds best model RMSE; oracle is broken")


def build_rmse_report(obs: ObservationSeries, ens: EnsembleMatrix,
                      trace: AggregationTrace, burn_in: int | None = None) -> RmseReport:
    if burn_in is None:
        burn_in = default_burn_in(obs.n_steps)
    per_model = np.array([rmse(ens.values[j], obs, burn_in)
                          for j in range(ens.n_models)])
    best = int(np.argmin(per_model))
    oracle_w, oracle_rmse = best_convex_oracle(obs, ens, burn_in)
    return RmseReport(
        series=obs.id,
        burn_in=burn_in,
        rmse_algorithm=rmse(trace, obs, burn_in),
        rmse_best_model=float(per_model[best]),
        best_model_index=best,
        rmse_best_convex=oracle_rmse,
        convex_oracle_weights=oracle_w,
    )


# ---------------------------------------------------------------------------
# regret bound checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegretBoundParams:
    """Constants entering a bound check."""

    B: float
    V: float
    T: int
    N: int
    hyperparameter: float

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("B must be nonnegative")
        if self.V < 1:
            raise ValueError("V must be at least 1")


@dataclass(frozen=True)
class BoundCheckReport:
    algorithm: Algorithm
    params: RegretBoundParams
    average_loss: float
    comparator_loss: float
    epsilon: float
    margin: float
    passed: bool


def _fixed_hyperparameter(trace: AggregationTrace, algorithm: Algorithm) -> float:
    hyper = trace.hyperparameters
    if not np.all(hyper == hyper[0]):
        raise ValueError(f"{algorithm.value} bound check needs a fixed-parameter trace")
    return float(hyper[0])


def _data_bound(obs, ens) -> float:
    return float(max(np.abs(obs.values).max(), np.abs(ens.values).max()))


def check_ewa_bound(trace: AggregationTrace, obs: ObservationSeries,
                    ens: EnsembleMatrix, params: RegretBoundParams | None = None,
                    raise_on_violation: bool = True) -> BoundCheckReport:
    """Certify the EWA guarantee over the single-model reference set.

    eps_T is ln(N)/(eta T) when eta <= 1/(2 B^2) and gains an extra
    eta B^2 / 8 term beyond that threshold. Requires data in [0, B];
    B is taken from the data when ``params`` is not supplied, which only
    strengthens the check.
    """
    eta = _fixed_hyperparameter(trace, Algorithm.EWA)
    n_models, t_total = ens.n_models, obs.n_steps
    if params is None:
        params = RegretBoundParams(_data_bound(obs, ens), 1.0, t_total, n_models, eta)
    b = params.B
    if obs.values.min() < 0 or ens.values.min() < 0:
        raise ValueError("the EWA bound applies to nonnegative data only")

    lhs = float(trace.losses.mean())
    model_losses = np.mean((ens.values - obs.values[None, :]) ** 2, axis=1)
    comparator = float(model_losses.min())
    threshold = np.inf if b == 0 else 1.0 / (2.0 * b * b)
    epsilon = np.log(n_models) / (eta * t_total)
    if eta > threshold:
        epsilon += eta * b * b / 8.0
    margin = epsilon + comparator - lhs
    report = BoundCheckReport(Algorithm.EWA, params, lhs, comparator,
                              float(epsilon), float(margin), margin >= 0)
    if raise_on_violation and not report.passed:
        raise BoundViolated(f"EWA bound violated by {-margin}", report)
    return report


def _ball_constrained_lsq(ens_values: np.ndarray, y: np.ndarray, radius: float):
    """Minimize the average square loss of constant weights over a ball.

    If the minimum-norm least-squares solution fits in the ball it is
    optimal; otherwise the optimum lies on the sphere and is found by a
    root search on the Lagrange multiplier of the norm constraint.
    """
    x = ens_values.T  # (T, N)
    v, *_ = np.linalg.lstsq(x, y, rcond=None)
    if np.linalg.norm(v) > radius:
        gram = x.T @ x
        b = x.T @ y
        d, q = np.linalg.eigh(gram)
        d = np.maximum(d, 0.0)
        qb = q.T @ b

        def norm_sq_minus(mu):
            return float(np.sum((qb / (d + mu)) ** 2)) - radius * radius

        hi = float(np.linalg.norm(b)) / radius
        lo = 1e-300
        if norm_sq_minus(lo) > 0:
            mu = brentq(norm_sq_minus, lo, hi, xtol=1e-10)
        else:
            mu = lo
        v = q @ (qb / (d + mu))
    avg = float(np.mean((x @ v - y) ** 2))
    return v, avg


def check_ridge_bound(trace: AggregationTrace, obs: ObservationSeries,
                      ens: EnsembleMatrix, v_radius: float = 1.0,
                      params: RegretBoundParams | None = None,
                      raise_on_violation: bool = True) -> BoundCheckReport:
    """Certify the Ridge guarantee over the V-ball of linear weights.

    eps_T = (lam V^2 + 4 N B^2 (1 + N B^2 T / lam) ln(1 + B^2 T / lam)
             + 5 B^2) / T for data in [-B, B]. The comparator infimum
    over the ball is computed exactly (see _ball_constrained_lsq).
    """
    lam = _fixed_hyperparameter(trace, Algorithm.RIDGE)
    n_models, t_total = ens.n_models, obs.n_steps
    if params is None:
        params = RegretBoundParams(_data_bound(obs, ens), v_radius, t_total,
                                   n_models, lam)
    b, v_rad = params.B, params.V

    lhs = float(trace.losses.mean())
    _, comparator = _ball_constrained_lsq(ens.values, obs.values, v_rad)
    b2 = b * b
    epsilon = (lam * v_rad * v_rad
               + 4.0 * n_models * b2 * (1.0 + n_models * b2 * t_total / lam)
               * np.log1p(b2 * t_total / lam)
               + 5.0 * b2) / t_total
    margin = epsilon + comparator - lhs
    report = BoundCheckReport(Algorithm.RIDGE, params, lhs, comparator,
                              float(epsilon), float(margin), margin >= 0)
    if raise_on_violation and not report.passed:
        raise BoundViolated(f"Ridge bound violated by {-margin}", report)
    return report
