"""Multi-step-ahead interval forecasting via scenario cones.

With observations known through step T-1 and model trajectories known
through step T+K, the pipeline is:

1. Build a cone of plausible observation continuations, anchored at the
   last observation. Its slopes are the extreme 10-step average
   variations seen in the learning observations and in any single model
   trajectory over the prediction window; physical bounds may clamp it.
2. For every scenario drawn from the cone, imagine having observed it
   and run the aggregation algorithm on the putative past; collect the
   aggregated forecast at each step T+k.
3. Emit, per step, the hull of those forecasts over all scenarios:
   exactly for Ridge (the forecast is affine in the putative
   observations, so box extrema are attained coordinatewise at interval
   endpoints), and as a guaranteed superset for EWA (interval
   propagation of per-model cumulative-loss bounds into weight boxes).

The raw hulls are then enlarged to at least the estimated noise level
and finally translated to absorb the one-step forecast error at the
start of the prediction period (enlargement first, then shift).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregators import _ewa_weight_vector, ridge_solve, uniform_weights
from .errors import EmptyCone, InfeasibleWeightBox, InsufficientHistory

VARIATION_WINDOW = 10
STABILITY_WINDOW = 15
DEFAULT_STABILITY_THRESHOLD = 150.0
RMSE_FILTER_FACTOR = 10.0


# ---------------------------------------------------------------------------
# scenario cone
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeSlope:
    """Extreme average variations per step; either may be negative."""

    m_down: float
    m_up: float

    def __post_init__(self):
        if self.m_down > self.m_up:
            raise ValueError("m_down must not exceed m_up")


@dataclass(frozen=True)
class ScenarioCone:
    """Product of per-step intervals anchored at the last observation.

    Interval k bounds the putative observation k steps past the anchor;
    interval 0 is the anchor itself. ``horizon`` intervals are
    materialized; ``interval_at`` also evaluates beyond them.
    """

    anchor: float
    slope: ConeSlope
    horizon: int
    clamps: tuple | None
    per_step_intervals: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.per_step_intervals, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "per_step_intervals", arr)

    @classmethod
    def build(cls, anchor: float, slope: ConeSlope, horizon: int,
              clamps: tuple | None = None) -> "ScenarioCone":
        cone = cls(anchor, slope, horizon, clamps, np.empty((0, 2)))
        intervals = np.array([cone.interval_at(k) for k in range(horizon)])
        return cls(anchor, slope, horizon, clamps, intervals)

    def interval_at(self, k: int) -> tuple:
        """[anchor + k*m_down, anchor + k*m_up] intersected with clamps."""
        lo = self.anchor + k * self.slope.m_down
        hi = self.anchor + k * self.slope.m_up
        if self.clamps is not None:
            lo = max(lo, self.clamps[0])
            hi = min(hi, self.clamps[1])
        if lo > hi:
            raise EmptyCone(f"clamping emptied the scenario interval at offset {k}")
        return lo, hi


def build_cone(y_learn, m_pred, clamps: tuple | None = None,
               window: int = VARIATION_WINDOW) -> ScenarioCone:
    """Cone of plausible continuations of the learning observations.

    Slopes are the min/max over all ``window``-step average variations
    (overlapping) of the observations and of every single model
    trajectory over the prediction columns ``m_pred``.
    """
    y = np.asarray(y_learn, dtype=float)
    m_pred = np.atleast_2d(np.asarray(m_pred, dtype=float))
    if len(y) < window + 1:
        raise InsufficientHistory(
            f"need at least {window + 1} past observations, got {len(y)}")
    variations = [(y[window:] - y[:-window]) / window]
    if m_pred.shape[1] >= window + 1:
        variations.append(
            ((m_pred[:, window:] - m_pred[:, :-window]) / window).ravel())
    pooled = np.concatenate(variations)
    slope = ConeSlope(float(pooled.min()), float(pooled.max()))
    return ScenarioCone.build(float(y[-1]), slope, m_pred.shape[1], clamps)


# ---------------------------------------------------------------------------
# noise estimation and model filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseEstimate:
    """Noise level inferred from locally stable stretches of the series.

    ``stable_steps`` holds the 1-based steps whose observation stays
    within the threshold of every neighbour up to ``stability_window``
    steps away (window truncated at the series edges). ``sigma_max`` is
    the largest deviation of a stable observation from its centered
    5-point mean, or zero when no step qualifies.
    """

    sigma_max: float
    stability_threshold: float
    stability_window: int
    stable_steps: frozenset

    def __post_init__(self):
        if self.sigma_max < 0:
            raise ValueError("sigma_max must be nonnegative")


def estimate_noise(y_learn, stability_threshold: float = DEFAULT_STABILITY_THRESHOLD,
                   window: int = STABILITY_WINDOW) -> NoiseEstimate:
    if stability_threshold <= 0:
        raise ValueError("stability_threshold must be positive")
    y = np.asarray(y_learn, dtype=float)
    n = len(y)
    stable = []
    for i in range(n):
        lo, hi = max(0, i - window), min(n - 1, i + window)
        if np.abs(y[lo:hi + 1] - y[i]).max() <= stability_threshold:
            stable.append(i)
    sigma = 0.0
    for i in stable:
        if i - 2 >= 0 and i + 2 <= n - 1:  # centered mean needs the full window
            sigma = max(sigma, abs(y[i] - y[i - 2:i + 3].mean()))
    return NoiseEstimate(float(sigma), stability_threshold, window,
                         frozenset(i + 1 for i in stable))


@dataclass(frozen=True)
class FilterResult:
    """Models retained by the learning-RMSE filter.

    ``degenerate`` flags the boundary case of a zero-RMSE best model, in
    which only perfect models survive the literal threshold.
    """

    indices: np.ndarray
    rmses: np.ndarray
    threshold: float
    degenerate: bool


def filter_models(y_learn, m_learn, factor: float = RMSE_FILTER_FACTOR) -> FilterResult:
    """Keep models whose learning RMSE is within ``factor`` of the best."""
    y = np.asarray(y_learn, dtype=float)
    m = np.atleast_2d(np.asarray(m_learn, dtype=float))
    rmses = np.sqrt(np.mean((m - y[None, :]) ** 2, axis=1))
    threshold = factor * float(rmses.min())
    indices = np.flatnonzero(rmses <= threshold)
    return FilterResult(indices, rmses, threshold, float(rmses.min()) == 0.0)


# ---------------------------------------------------------------------------
# interval series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalSeries:
    """Per-step interval forecasts with enlargement and shift metadata.

    Entry k covers step ``first_step + k``; entry 0 is the one-step
    forecast at the start of the prediction period. ``ops_order``
    records that enlargement was applied before the shift.
    """

    lows: np.ndarray
    highs: np.ndarray
    sigma_applied: float
    shift: float
    first_step: int
    ops_order: str = "enlarge_then_shift"

    def __post_init__(self):
        lo = np.asarray(self.lows, dtype=float)
        hi = np.asarray(self.highs, dtype=float)
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lows", lo)
        object.__setattr__(self, "highs", hi)
        if len(lo) != len(hi):
            raise ValueError("lows and highs must have equal length")
        if np.any(lo > hi):
            raise ValueError("interval lower bound exceeds upper bound")

    @property
    def centers(self) -> np.ndarray:
        return (self.lows + self.highs) / 2.0

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.first_step, self.first_step + len(self.lows))

    def __len__(self) -> int:
        return len(self.lows)


def _finalize(lows, highs, sigma_max, shift, first_step):
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    centers = (lows + highs) / 2.0
    half = np.maximum((highs - lows) / 2.0, sigma_max)
    return IntervalSeries(centers - half + shift, centers + half + shift,
                          float(sigma_max), float(shift), first_step)


def _check_shapes(y_learn, m_learn, m_pred, cone):
    y = np.asarray(y_learn, dtype=float)
    m_learn = np.atleast_2d(np.asarray(m_learn, dtype=float))
    m_pred = np.atleast_2d(np.asarray(m_pred, dtype=float))
    if m_learn.shape[1] != len(y):
        raise ValueError("m_learn must have one column per learning observation")
    if m_pred.shape[0] != m_learn.shape[0]:
        raise ValueError("m_learn and m_pred must have the same model count")
    if cone.horizon < m_pred.shape[1]:
        raise ValueError("cone horizon shorter than the prediction window")
    return y, m_learn, m_pred


# ---------------------------------------------------------------------------
# Ridge: exact interval bounds
# ---------------------------------------------------------------------------

def ridge_interval_forecast(y_learn, m_learn, m_pred, cone: ScenarioCone,
                            lam: float, sigma_max: float = 0.0,
                            y_next: float | None = None,
                            first_step: int | None = None) -> IntervalSeries:
    """Exact per-step hulls of the Ridge forecast over all cone scenarios.

    For fixed model forecasts the fitted weights, hence the aggregated
    forecast at step T+k, are affine in the putative observation vector.
    The extrema over the scenario box are therefore attained at interval
    endpoints, selected coordinatewise by the sign of each coefficient.

    Apply the model-subset filter to the inputs beforehand if desired.
    ``y_next`` is the observation at the first prediction step; when
    given, the series is shifted by minus the average of the last five
    one-step forecast errors (the four final learning steps plus that
    first prediction step).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    y, m_learn, m_pred = _check_shapes(y_learn, m_learn, m_pred, cone)
    n_models, t_learn = m_learn.shape
    k_max = m_pred.shape[1] - 1
    if first_step is None:
        first_step = t_learn + 1

    # One pass over the learning steps accumulates the statistics and
    # captures the one-step forecasts needed for the initial matching.
    gram = np.zeros((n_models, n_models))
    moment = np.zeros(n_models)
    deltas = []
    matching_from = max(t_learn - 3, 1)  # the four final learning steps
    for t in range(1, t_learn + 1):
        if t >= matching_from and y_next is not None:
            w = (uniform_weights(n_models) if t == 1
                 else ridge_solve(gram, moment, lam))
            deltas.append(float(w @ m_learn[:, t - 1]) - y[t - 1])
        column = m_learn[:, t - 1]
        gram += np.outer(column, column)
        moment += y[t - 1] * column

    w_now = ridge_solve(gram, moment, lam)
    point = float(w_now @ m_pred[:, 0])
    shift = 0.0
    if y_next is not None:
        deltas.append(point - y_next)
        shift = -float(np.mean(deltas))

    lows = np.empty(k_max + 1)
    highs = np.empty(k_max + 1)
    lows[0] = highs[0] = point
    for k in range(1, k_max + 1):
        column = m_pred[:, k - 1]
        gram += np.outer(column, column)
        u = ridge_solve(gram, m_pred[:, k], lam)
        base = float(u @ moment)
        lo = hi = base
        for i in range(k):
            a, b = cone.interval_at(i + 1)
            alpha = float(u @ m_pred[:, i])
            lo += min(alpha * a, alpha * b)
            hi += max(alpha * a, alpha * b)
        lows[k], highs[k] = lo, hi

    return _finalize(lows, highs, sigma_max, shift, first_step)


# ---------------------------------------------------------------------------
# EWA: guaranteed superset via loss-interval propagation
# ---------------------------------------------------------------------------

def _loss_contribution_bounds(interval: tuple, column: np.ndarray):
    """Range of (z - m_j)^2 over z in the interval, per model."""
    a, b = interval
    da, db = (a - column) ** 2, (b - column) ** 2
    lo = np.where((column >= a) & (column <= b), 0.0, np.minimum(da, db))
    hi = np.maximum(da, db)
    return lo, hi


def _ewa_weight_box(loss_min: np.ndarray, loss_max: np.ndarray, eta: float):
    """Per-model bounds on the EWA weights over all loss configurations.

    The weight on model j is smallest when its own loss sits at the top
    of its range while every other loss sits at the bottom, and vice
    versa. Exponentials are shifted by the smallest lower bound so every
    exponent is nonpositive; expressions that underflow entirely fall
    back to the trivial bounds 0 and 1, which are always valid.
    """
    n = len(loss_min)
    if n == 1:
        return np.ones(1), np.ones(1)
    ref = loss_min.min()
    e_min = np.exp(-eta * (loss_min - ref))
    e_max = np.exp(-eta * (loss_max - ref))
    sum_min, sum_max = e_min.sum(), e_max.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        lo = e_max / (e_max + (sum_min - e_min))
        hi = e_min / (e_min + (sum_max - e_max))
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, 1.0)
    if lo.sum() > 1.0 + 1e-9 or hi.sum() < 1.0 - 1e-9:
        raise InfeasibleWeightBox(
            "weight box does not intersect the simplex (propagation bug)")
    return lo, hi


def _box_simplex_extremes(w_lo: np.ndarray, w_hi: np.ndarray, coeffs: np.ndarray):
    """Min and max of w . coeffs over the weight box within the simplex.

    Greedy: start every weight at its lower bound and hand the remaining
    mass to the models with the most extreme coefficients first.
    """
    slack = max(1.0 - float(w_lo.sum()), 0.0)
    room = w_hi - w_lo

    def fill(order):
        w = w_lo.copy()
        remaining = slack
        for j in order:
            if remaining <= 0.0:
                break
            take = min(remaining, room[j])
            w[j] += take
            remaining -= take
        return float(np.dot(w, coeffs))

    descending = np.argsort(-coeffs, kind="stable")
    return fill(descending[::-1]), fill(descending)


def ewa_interval_forecast(y_learn, m_learn, m_pred, cone: ScenarioCone,
                          eta: float, sigma_max: float = 0.0,
                          y_next: float | None = None,
                          first_step: int | None = None) -> IntervalSeries:
    """Guaranteed supersets of the EWA forecast hulls over cone scenarios.

    Per-model cumulative-loss intervals are propagated step by step:
    each putative observation contributes the range of its square error
    against the model's value. The loss intervals bound each weight from
    both sides, and the forecast extrema over the resulting weight boxes
    (within the simplex) enclose every per-scenario forecast. ``y_next``
    enables the initial matching: the series is shifted by minus the
    one-step forecast error at the first prediction step.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    y, m_learn, m_pred = _check_shapes(y_learn, m_learn, m_pred, cone)
    k_max = m_pred.shape[1] - 1
    if first_step is None:
        first_step = m_learn.shape[1] + 1

    base = np.sum((m_learn - y[None, :]) ** 2, axis=1)
    point = float(np.dot(_ewa_weight_vector(base, eta), m_pred[:, 0]))
    shift = 0.0 if y_next is None else -(point - y_next)

    lows = np.empty(k_max + 1)
    highs = np.empty(k_max + 1)
    lows[0] = highs[0] = point
    loss_min, loss_max = base.copy(), base.copy()
    for k in range(1, k_max + 1):
        c_lo, c_hi = _loss_contribution_bounds(cone.interval_at(k), m_pred[:, k - 1])
        loss_min += c_lo
        loss_max += c_hi
        w_lo, w_hi = _ewa_weight_box(loss_min, loss_max, eta)
        lows[k], highs[k] = _box_simplex_extremes(w_lo, w_hi, m_pred[:, k])

    return _finalize(lows, highs, sigma_max, shift, first_step)
