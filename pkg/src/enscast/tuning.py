"""Online hyperparameter selection by grid search on past cumulative loss.

Every grid point corresponds to a complete fixed-parameter run of the
chosen algorithm. At each step the point whose run has the smallest
cumulative loss so far is selected (ties broken toward the smallest
parameter value, the most conservative choice) and its forecast becomes
the adaptive forecast. Afterwards every point's run is advanced with the
revealed observation and charged its own forecast's loss.

The per-point runs share their sufficient statistics: cumulative
per-model losses (EWA) and the gram/moment accumulators (Ridge, Lasso)
are identical across grid points, so they are stored once. Weights,
forecasts and losses are still produced through exactly the same solver
calls a standalone fixed-parameter run makes, so the per-point runs
match independent runs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aggregators as agg
from .core import Algorithm, WeightFlavor, WeightVector

DEFAULT_GRIDS = {
    Algorithm.EWA: (1e-20, 1e10, 300),
    Algorithm.LASSO: (1e-20, 1e10, 100),
    Algorithm.RIDGE: (1e-30, 1e30, 100),
}


@dataclass(frozen=True)
class HyperGrid:
    """Strictly increasing, log-equally-spaced positive parameter values."""

    points: np.ndarray
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if len(pts) != self.count or self.count < 1:
            raise ValueError("count must match the number of points")
        if pts[0] <= 0:
            raise ValueError("grid points must be positive")
        if self.count > 1:
            if np.any(np.diff(pts) <= 0):
                raise ValueError("grid points must be strictly increasing")
            ratios = pts[1:] / pts[:-1]
            if np.max(ratios) - np.min(ratios) > 1e-9 * np.min(ratios):
                raise ValueError("grid points must be equally spaced in log scale")
        if abs(pts[0] - self.lo) > 1e-12 * self.lo or abs(pts[-1] - self.hi) > 1e-12 * self.hi:
            raise ValueError("grid endpoints must equal lo and hi")

    @classmethod
    def geometric(cls, lo: float, hi: float, count: int) -> "HyperGrid":
        if count == 1:
            if lo != hi:
                raise ValueError("a single-point grid needs lo == hi")
            return cls(np.array([lo]), lo, hi, 1)
        return cls(np.geomspace(lo, hi, count), lo, hi, count)

    @classmethod
    def from_points(cls, points) -> "HyperGrid":
        pts = np.asarray(points, dtype=float)
        return cls(pts, float(pts[0]), float(pts[-1]), len(pts))

    def subsample(self, stride: int) -> "HyperGrid":
        """Coarser grid over the same range (cost-control knob)."""
        if stride <= 1:
            return self
        count = max(2, int(np.ceil(self.count / stride)))
        return HyperGrid.geometric(self.lo, self.hi, count)


def default_grid(algorithm) -> HyperGrid:
    """The wide default grid for each algorithm (log-spaced)."""
    lo, hi, count = DEFAULT_GRIDS[Algorithm(algorithm)]
    return HyperGrid.geometric(lo, hi, count)


class TunerState:
    """Adaptive-parameter driver for one online run.

    Use through :func:`enscast.aggregators.run_online` or directly via the
    ``select_and_forecast`` / ``update`` pair, called once each per step
    in that order.
    """

    def __init__(self, algorithm, n_models: int, grid: HyperGrid | None = None):
        self.algorithm = Algorithm(algorithm)
        if self.algorithm not in (Algorithm.EWA, Algorithm.RIDGE, Algorithm.LASSO):
            raise ValueError(f"cannot tune algorithm {self.algorithm}")
        self.grid = grid if grid is not None else default_grid(self.algorithm)
        self.n_models = n_models
        self.point_losses = np.zeros(self.grid.count)
        self.step = 1
        self._flavor = (WeightFlavor.CONVEX if self.algorithm is Algorithm.EWA
                        else WeightFlavor.LINEAR)
        # shared sufficient statistics (identical for every grid point)
        if self.algorithm is Algorithm.EWA:
            self.model_losses = np.zeros(n_models)
        else:
            self.gram = np.zeros((n_models, n_models))
            self.moment = np.zeros(n_models)
        if self.algorithm is Algorithm.LASSO:
            self.warm = np.zeros((self.grid.count, n_models))
        self._cached_step = None
        self._cached_forecasts = None
        self._cached_weights = None

    def _point_weights(self) -> np.ndarray:
        """Current weight vector of every grid point's run, one per row."""
        count, n = self.grid.count, self.n_models
        if self.step == 1:
            return np.tile(agg.uniform_weights(n), (count, 1))
        if self.algorithm is Algorithm.EWA:
            w = np.empty((count, n))
            for i, eta in enumerate(self.grid.points):
                w[i] = agg._ewa_weight_vector(self.model_losses, eta)
            return w
        if self.algorithm is Algorithm.RIDGE:
            d, q = agg._ridge_factor(self.gram)
            w = np.empty((count, n))
            for i, lam in enumerate(self.grid.points):
                w[i] = agg._ridge_apply(d, q, self.moment, lam)
            return w
        sols, _ = agg._lasso_cd(self.gram, self.moment, self.grid.points, self.warm)
        self.warm = sols.copy()
        return sols

    def select_and_forecast(self, ensemble_column):
        """Pick the grid point with minimal past loss and forecast with it.

        Returns (chosen hyperparameter, its WeightVector, forecast). All
        per-point forecasts are cached for the matching ``update``.
        """
        column = np.asarray(ensemble_column, dtype=float)
        weights = self._point_weights()
        forecasts = np.empty(self.grid.count)
        for i in range(self.grid.count):
            forecasts[i] = agg.aggregate(weights[i], column)
        self._cached_step = self.step
        self._cached_forecasts = forecasts
        self._cached_weights = weights
        best = int(np.argmin(self.point_losses))  # first minimum = smallest value
        chosen = float(self.grid.points[best])
        wvec = WeightVector(weights[best].copy(), self._flavor, self.algorithm,
                            chosen, self.step)
        return chosen, wvec, float(forecasts[best])

    def update(self, y: float, ensemble_column) -> None:
        """Advance every grid point's run with the revealed observation."""
        if self._cached_step != self.step:
            raise RuntimeError("select_and_forecast must be called before update")
        column = np.asarray(ensemble_column, dtype=float)
        self.point_losses += (self._cached_forecasts - y) ** 2
        if self.algorithm is Algorithm.EWA:
            self.model_losses += (column - y) ** 2
        else:
            self.gram += np.outer(column, column)
            self.moment += y * column
        self.step += 1
        self._cached_step = None


def make_tuner(algorithm, n_models: int, grid: HyperGrid | None = None) -> TunerState:
    return TunerState(algorithm, n_models, grid)
