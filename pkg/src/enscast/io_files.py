"""CSV ingestion and emission.

Two file kinds per series, named ``<name>.obs.csv`` and
``<name>.ens.csv`` where ``<name>`` is the compact series name
(``BHP_I1``, ``QO_P7``, ...):

* observations: header ``step,time_days,value``, one row per step;
* ensemble: header ``step,time_days,model_1,...,model_N``.

The step column must run contiguously from 1. All numbers are written
with 17 significant digits so a load/write round trip is exact.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .core import EnsembleMatrix, ObservationSeries, SeriesId
from .errors import NonContiguousSteps, ParseError

OBS_SUFFIX = ".obs.csv"
ENS_SUFFIX = ".ens.csv"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_rows_atomic(path, header, rows) -> None:
    """Write a CSV via a temp file and rename, so readers never see a torn file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def write_observation_csv(path, obs: ObservationSeries) -> None:
    rows = [(t + 1, fmt(obs.step_times[t]), fmt(obs.values[t]))
            for t in range(obs.n_steps)]
    write_rows_atomic(path, ["step", "time_days", "value"], rows)


def write_ensemble_csv(path, ens: EnsembleMatrix,
                       step_times: np.ndarray | None = None) -> None:
    n, t_total = ens.n_models, ens.n_steps
    if step_times is None:
        step_times = np.arange(t_total, dtype=float)
    header = ["step", "time_days"] + [f"model_{j + 1}" for j in range(n)]
    rows = [[t + 1, fmt(step_times[t])] + [fmt(v) for v in ens.values[:, t]]
            for t in range(t_total)]
    write_rows_atomic(path, header, rows)


def series_name_from_path(path) -> str:
    name = Path(path).name
    for suffix in (OBS_SUFFIX, ENS_SUFFIX):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def _read_rows(path, expected_width: int, header_check) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if not header_check(row):
                    raise ParseError(f"{path}: unexpected header {row}", line=1)
                continue
            if not row:
                continue
            if len(row) != expected_width:
                raise ParseError(f"{path}: expected {expected_width} fields, "
                                 f"got {len(row)}", line=lineno)
            try:
                step = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as e:
                raise ParseError(f"{path}: {e}", line=lineno) from e
            expected_step = len(rows) + 1
            if step != expected_step:
                raise NonContiguousSteps(
                    f"{path}: expected step {expected_step}, got {step}",
                    step=expected_step)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows", line=1)
    return rows


def load_observation_csv(path, units: str | None = None) -> ObservationSeries:
    rows = _read_rows(path, 3, lambda h: h == ["step", "time_days", "value"])
    data = np.asarray(rows)
    sid = SeriesId.from_name(series_name_from_path(path), units)
    return ObservationSeries(sid, data[:, 1], data[:, 0])


def load_ensemble_csv(path, units: str | None = None) -> EnsembleMatrix:
    def check(h):
        return (len(h) >= 3 and h[:2] == ["step", "time_days"]
                and all(c == f"model_{j + 1}" for j, c in enumerate(h[2:])))

    with open(path, newline="") as fh:
        width = len(next(csv.reader(fh)))
    rows = _read_rows(path, width, check)
    data = np.asarray(rows)
    sid = SeriesId.from_name(series_name_from_path(path), units)
    return EnsembleMatrix(sid, data[:, 1:].T)


def discover_series(data_dir) -> list:
    """Sorted names that have both an observations and an ensemble file."""
    data_dir = Path(data_dir)
    obs = {series_name_from_path(p) for p in data_dir.glob(f"*{OBS_SUFFIX}")}
    ens = {series_name_from_path(p) for p in data_dir.glob(f"*{ENS_SUFFIX}")}
    return sorted(obs & ens)


def load_series(data_dir, name: str, units: str | None = None):
    data_dir = Path(data_dir)
    obs = load_observation_csv(data_dir / f"{name}{OBS_SUFFIX}", units)
    ens = load_ensemble_csv(data_dir / f"{name}{ENS_SUFFIX}", units)
    return obs, ens
