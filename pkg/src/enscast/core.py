"""Domain types shared by all modules.

Conventions: steps are an abstract 1-based integer grid 1..T in all
user-facing records, while numpy arrays are indexed 0-based internally.
Physical step times are carried as metadata only and never enter any
formula. All types are immutable after construction (arrays are marked
read-only), so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import IdMismatch, LengthMismatch, NonFiniteValue


class PropertyKind(str, Enum):
    BOTTOMHOLE_PRESSURE = "bottomhole_pressure"
    OIL_RATE = "oil_rate"
    WATER_RATE = "water_rate"
    OTHER = "other"


_KIND_PREFIX = {
    PropertyKind.BOTTOMHOLE_PRESSURE: "BHP",
    PropertyKind.OIL_RATE: "QO",
    PropertyKind.WATER_RATE: "QW",
    PropertyKind.OTHER: "X",
}
_PREFIX_KIND = {v: k for k, v in _KIND_PREFIX.items()}
_KIND_UNITS = {
    PropertyKind.BOTTOMHOLE_PRESSURE: "psi",
    PropertyKind.OIL_RATE: "bbl/day",
    PropertyKind.WATER_RATE: "bbl/day",
    PropertyKind.OTHER: "unit",
}


def _as_readonly(a, dtype=float, ndim=1):
    arr = np.array(a, dtype=dtype)
    if arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got {arr.ndim}-d")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SeriesId:
    """Identifies one measured property at one well."""

    property_kind: PropertyKind
    well_label: str
    units: str

    def __post_init__(self):
        if not self.well_label:
            raise ValueError("well_label must be non-empty")
        if not self.units:
            raise ValueError("units must be non-empty")

    @property
    def name(self) -> str:
        """Compact name such as ``BHP_I1`` or ``QO_P7``."""
        return f"{_KIND_PREFIX[self.property_kind]}_{self.well_label}"

    @classmethod
    def from_name(cls, name: str, units: str | None = None) -> "SeriesId":
        """Rebuild an id from its compact name; units default per kind."""
        prefix, _, label = name.partition("_")
        kind = _PREFIX_KIND.get(prefix, PropertyKind.OTHER)
        if kind is PropertyKind.OTHER:
            label = name
        return cls(kind, label or name, units or _KIND_UNITS[kind])


@dataclass(frozen=True)
class ObservationSeries:
    """Reference measurements y_1..y_T for one series.

    ``values[t-1]`` is the observation at step t; ``step_times`` (days)
    must be strictly increasing. Finiteness of the values is checked by
    :func:`validate_pair`, the gate through which data enters the
    algorithms.
    """

    id: SeriesId
    values: np.ndarray
    step_times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_readonly(self.values))
        object.__setattr__(self, "step_times", _as_readonly(self.step_times))
        if len(self.values) != len(self.step_times):
            raise LengthMismatch(
                f"{len(self.values)} values vs {len(self.step_times)} step times"
            )
        if len(self.values) < 2:
            raise ValueError("a series needs at least 2 steps")
        if not np.all(np.diff(self.step_times) > 0):
            raise ValueError("step_times must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EnsembleMatrix:
    """Model forecast trajectories aligned with an observation grid.

    ``values[j, t-1]`` is model j's value at step t (N rows, T columns).
    """

    id: SeriesId
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_readonly(self.values, ndim=2))
        if self.values.shape[0] < 1:
            raise ValueError("need at least one model")

    @property
    def n_models(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def column(self, step: int) -> np.ndarray:
        """All model values at 1-based step."""
        return self.values[:, step - 1]

    def select_models(self, indices) -> "EnsembleMatrix":
        return EnsembleMatrix(self.id, self.values[np.asarray(indices, dtype=int)])


class WeightFlavor(str, Enum):
    CONVEX = "convex"
    LINEAR = "linear"


class Algorithm(str, Enum):
    EWA = "ewa"
    RIDGE = "ridge"
    LASSO = "lasso"
    UNIFORM = "uniform"
    ORACLE = "oracle"  # reference weights produced by evaluation oracles


@dataclass(frozen=True)
class WeightVector:
    """Weights over the N models at one step, with provenance."""

    weights: np.ndarray
    flavor: WeightFlavor
    algorithm: Algorithm
    hyperparameter: float
    step: int

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_readonly(self.weights))
        w = self.weights
        if not np.all(np.isfinite(w)):
            raise NonFiniteValue("non-finite weight", int(np.argmin(np.isfinite(w))))
        if self.flavor is WeightFlavor.CONVEX:
            if w.min() < 0.0:
                raise ValueError(f"convex weights must be nonnegative, got min {w.min()}")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"convex weights must sum to 1, got {w.sum()!r}")
        if self.hyperparameter < 0:
            raise ValueError("hyperparameter must be nonnegative")

    @property
    def n_models(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class AggregationTrace:
    """Per-step record of an online aggregation run.

    Steps are contiguous 1..T. ``losses[t-1]`` is the realized square
    error of ``forecasts[t-1]`` against the revealed observation.
    """

    steps: np.ndarray
    forecasts: np.ndarray
    losses: np.ndarray
    hyperparameters: np.ndarray
    weights: tuple = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", _as_readonly(self.steps, dtype=int))
        object.__setattr__(self, "forecasts", _as_readonly(self.forecasts))
        object.__setattr__(self, "losses", _as_readonly(self.losses))
        object.__setattr__(self, "hyperparameters", _as_readonly(self.hyperparameters))
        object.__setattr__(self, "weights", tuple(self.weights))
        n = len(self.steps)
        if not (len(self.forecasts) == len(self.losses) == len(self.hyperparameters)
                == len(self.weights) == n):
            raise LengthMismatch("trace columns have differing lengths")
        if n and not np.array_equal(self.steps, np.arange(self.steps[0], self.steps[0] + n)):
            raise ValueError("trace steps must be contiguous and increasing")
        if np.any(self.losses < 0):
            raise ValueError("losses must be nonnegative")

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def cumulative_losses(self) -> np.ndarray:
        """Running sum of per-step losses (non-decreasing)."""
        return np.cumsum(self.losses)


def validate_pair(obs: ObservationSeries, ens: EnsembleMatrix):
    """Check that an observation series and an ensemble belong together.

    Returns the pair unchanged if ids match, lengths match and every
    value is finite; raises on the first violation found, naming the
    offending 0-based index.
    """
    if obs.id != ens.id:
        raise IdMismatch(f"observation id {obs.id.name} != ensemble id {ens.id.name}")
    if obs.n_steps != ens.n_steps:
        raise LengthMismatch(
            f"{obs.n_steps} observation steps vs {ens.n_steps} ensemble columns"
        )
    bad = np.flatnonzero(~np.isfinite(obs.values))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteValue(f"non-finite observation at step index {i}", i)
    finite = np.isfinite(ens.values)
    if not finite.all():
        j, t = (int(v) for v in np.argwhere(~finite)[0])
        raise NonFiniteValue(f"non-finite ensemble value at model {j}, step index {t}", (j, t))
    return obs, ens
