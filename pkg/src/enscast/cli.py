"""Command-line surface.

Subcommands: ``synth-gen`` (write synthetic bundles), ``forecast-online``
(sequential one-step forecasts plus an RMSE summary), ``forecast-interval``
(multi-step interval forecasts with cone companions), ``evaluate``
(recompute traces, certify regret bounds, exit nonzero on any defect) and
``tune`` (adaptive runs with per-step chosen parameters and grid echo).

All output tables are plain CSV with 17-significant-digit numbers, ready
for any plotting tool. A flat ``key=value`` config file can supply any
flag's default; explicit flags win. Environment variables are never
consulted, so runs are reproducible from the command line alone.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, interval, io_files, synth
from .aggregators import run_online
from .core import Algorithm
from .errors import EnscastError, UnsupportedAlgorithm
from .tuning import HyperGrid, TunerState, default_grid

EVALUATE_FAILURE_EXIT = 2


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def read_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise EnscastError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def parse_grid_spec(spec: str) -> HyperGrid:
    """lo:hi:count, e.g. 1e-20:1e10:300."""
    try:
        lo, hi, count = spec.split(":")
        return HyperGrid.geometric(float(lo), float(hi), int(count))
    except ValueError as e:
        raise EnscastError(f"bad grid spec {spec!r} (want lo:hi:count)") from e


def parse_clamp_spec(spec: str) -> tuple:
    """lo:hi with inf allowed, e.g. 0:inf."""
    try:
        lo, hi = (float(v) for v in spec.split(":"))
    except ValueError as e:
        raise EnscastError(f"bad clamp spec {spec!r} (want lo:hi)") from e
    if lo > hi:
        raise EnscastError(f"bad clamp spec {spec!r}: lo exceeds hi")
    return lo, hi


def _setting(args, config: dict, key: str, cast, default=None):
    flag = getattr(args, key.replace(".", "_"), None)
    if flag is not None:
        return flag
    if key in config:
        return cast(config[key])
    return default


def _resolve_grid(args, config, algorithm: Algorithm) -> HyperGrid:
    if args.grid is not None:
        grid = parse_grid_spec(args.grid)
    elif f"grid.{algorithm.value}" in config:
        grid = parse_grid_spec(config[f"grid.{algorithm.value}"])
    else:
        grid = default_grid(algorithm)
    stride = int(config.get("grid_subsample", 1))
    return grid.subsample(stride)


def _fixed_hyper(args, config, algorithm: Algorithm):
    """The fixed hyperparameter for the algorithm, or None for adaptive."""
    if algorithm is Algorithm.EWA:
        return _setting(args, config, "eta", float)
    return _setting(args, config, "lambda", float)


def _series_units(config: dict, name: str):
    return config.get(f"units.{name}")


def _select_series(args, config) -> list:
    names = io_files.discover_series(args.data_dir)
    wanted = _setting(args, config, "series", str)
    if wanted:
        requested = [s.strip() for s in wanted.split(",") if s.strip()]
        missing = sorted(set(requested) - set(names))
        if missing:
            raise EnscastError(f"series not found in {args.data_dir}: {missing}")
        names = requested
    if not names:
        raise EnscastError(f"no series found in {args.data_dir}")
    return names


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# forecast-online
# ---------------------------------------------------------------------------

def _online_one_series(task):
    (data_dir, name, units, algorithm, hyper, grid_bounds, burn_in, out_dir) = task
    obs, ens = io_files.load_series(data_dir, name, units)
    algorithm = Algorithm(algorithm)
    if hyper is not None:
        trace = run_online(obs, ens, algorithm, hyperparameter=hyper)
        mode = "fixed"
    else:
        grid = HyperGrid.geometric(*grid_bounds)
        trace = run_online(obs, ens, algorithm,
                           tuner=TunerState(algorithm, ens.n_models, grid))
        mode = "adaptive"

    out_dir = Path(out_dir)
    io_files.write_rows_atomic(
        out_dir / f"{name}.trace.csv",
        ["step", "forecast", "observation", "loss", "hyperparameter"],
        [(int(t), io_files.fmt(f), io_files.fmt(y), io_files.fmt(l), io_files.fmt(h))
         for t, f, y, l, h in zip(trace.steps, trace.forecasts, obs.values,
                                  trace.losses, trace.hyperparameters)])
    io_files.write_rows_atomic(
        out_dir / f"{name}.weights.csv",
        ["step"] + [f"w_{j + 1}" for j in range(ens.n_models)],
        [[int(t)] + [io_files.fmt(w) for w in wv.weights]
         for t, wv in zip(trace.steps, trace.weights)])

    used_burn = burn_in if burn_in is not None else evaluation.default_burn_in(obs.n_steps)
    report = evaluation.build_rmse_report(obs, ens, trace, used_burn)
    return _rmse_row(name, algorithm, mode, report)


def _rmse_row(name, algorithm, mode, report):
    def ratio(num, den):
        if den == 0:
            return 1.0 if num == 0 else math.inf
        return num / den

    return [name, algorithm.value, mode, report.burn_in,
            io_files.fmt(report.rmse_algorithm),
            io_files.fmt(report.rmse_best_model),
            report.best_model_index + 1,
            io_files.fmt(report.rmse_best_convex),
            io_files.fmt(ratio(report.rmse_algorithm, report.rmse_best_model)),
            io_files.fmt(ratio(report.rmse_algorithm, report.rmse_best_convex))]


RMSE_HEADER = ["series", "algorithm", "mode", "burn_in", "rmse_algorithm",
               "rmse_best_model", "best_model_index", "rmse_best_convex",
               "ratio_vs_best_model", "ratio_vs_best_convex"]


def cmd_forecast_online(args, config) -> int:
    algorithm = Algorithm(args.algorithm)
    hyper = _fixed_hyper(args, config, algorithm)
    grid = _resolve_grid(args, config, algorithm)
    burn_in = _setting(args, config, "burn_in", int)
    out_dir = Path(_setting(args, config, "out", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    names = _select_series(args, config)
    jobs = _setting(args, config, "jobs", int, 1)
    tasks = [(args.data_dir, name, _series_units(config, name), algorithm.value,
              hyper, (grid.lo, grid.hi, grid.count), burn_in, str(out_dir))
             for name in names]
    rows = _map_jobs(_online_one_series, tasks, jobs)
    io_files.write_rows_atomic(out_dir / "rmse_summary.csv", RMSE_HEADER, rows)
    print(f"forecast-online: {len(rows)} series -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# forecast-interval
# ---------------------------------------------------------------------------

def _split_lengths(n_steps: int, split: float):
    if not 0.0 < split < 1.0:
        raise EnscastError(f"split must be in (0, 1), got {split}")
    learn_len = int(n_steps * split)
    k_max = n_steps - learn_len - 1
    if k_max < 1:
        raise EnscastError(f"split {split} leaves no multi-step horizon")
    return learn_len, k_max


def _interval_one_series(task):
    (data_dir, name, units, algorithm, hyper, split, clamp, threshold, out_dir) = task
    obs, ens = io_files.load_series(data_dir, name, units)
    algorithm = Algorithm(algorithm)
    learn_len, _ = _split_lengths(obs.n_steps, split)
    y_learn = obs.values[:learn_len]
    y_next = float(obs.values[learn_len])
    first_step = learn_len + 1

    meta = {"series": name, "algorithm": algorithm.value, "hyperparameter": hyper,
            "split": split, "first_prediction_step": first_step,
            "stability_threshold": threshold}
    used = ens
    if algorithm is Algorithm.RIDGE:
        kept = interval.filter_models(y_learn, ens.values[:, :learn_len])
        used = ens.select_models(kept.indices)
        meta["models_kept"] = [int(j) + 1 for j in kept.indices]
        meta["filter_degenerate_zero_rmse"] = bool(kept.degenerate)
    m_learn = used.values[:, :learn_len]
    m_pred = used.values[:, learn_len:]

    noise = interval.estimate_noise(y_learn, threshold)
    cone = interval.build_cone(y_learn, m_pred, clamp)
    fn = (interval.ridge_interval_forecast if algorithm is Algorithm.RIDGE
          else interval.ewa_interval_forecast)
    series = fn(y_learn, m_learn, m_pred, cone, hyper,
                sigma_max=noise.sigma_max, y_next=y_next, first_step=first_step)
    meta.update(sigma_max=noise.sigma_max, shift=series.shift,
                ops_order=series.ops_order)

    out_dir = Path(out_dir)
    io_files.write_rows_atomic(
        out_dir / f"{name}.interval.csv",
        ["step", "lo", "hi", "center", "sigma_applied", "shift"],
        [(int(s), io_files.fmt(lo), io_files.fmt(hi), io_files.fmt(c),
          io_files.fmt(series.sigma_applied), io_files.fmt(series.shift))
         for s, lo, hi, c in zip(series.steps, series.lows, series.highs,
                                 series.centers)])
    io_files.write_rows_atomic(
        out_dir / f"{name}.cone.csv",
        ["step", "cone_lo", "cone_hi"],
        [(int(first_step + k), io_files.fmt(lo), io_files.fmt(hi))
         for k, (lo, hi) in enumerate(cone.interval_at(k + 1)
                                      for k in range(len(series)))])
    (out_dir / f"{name}.interval.meta.json").write_text(
        json.dumps(meta, indent=2) + "\n")
    return name


def cmd_forecast_interval(args, config) -> int:
    algorithm = Algorithm(args.algorithm)
    if algorithm not in (Algorithm.RIDGE, Algorithm.EWA):
        raise UnsupportedAlgorithm(
            f"interval forecasting supports ridge and ewa, not {algorithm.value}")
    hyper = _fixed_hyper(args, config, algorithm)
    if hyper is None:
        flag = "--eta" if algorithm is Algorithm.EWA else "--lambda"
        raise EnscastError(f"forecast-interval needs a fixed {flag}")
    split = _setting(args, config, "split", float, 2.0 / 3.0)
    clamp = args.clamp or (parse_clamp_spec(config["clamp"]) if "clamp" in config else None)
    threshold = _setting(args, config, "stability_threshold", float,
                         interval.DEFAULT_STABILITY_THRESHOLD)
    out_dir = Path(_setting(args, config, "out", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    names = _select_series(args, config)
    jobs = _setting(args, config, "jobs", int, 1)
    tasks = [(args.data_dir, name, _series_units(config, name), algorithm.value,
              hyper, split, clamp, threshold, str(out_dir)) for name in names]
    done = _map_jobs(_interval_one_series, tasks, jobs)
    print(f"forecast-interval: {len(done)} series -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _load_trace_forecasts(path):
    rows = []
    import csv as _csv
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append(float(row[1]))
    return np.asarray(rows)


def cmd_evaluate(args, config) -> int:
    """Recompute each trace and certify the regret bounds.

    Any forecast mismatch against the deterministic recomputation, or any
    bound violation, makes the command exit nonzero. The EWA bound check
    is skipped (and reported as unchecked) for learning rates beyond the
    exp-concavity regime of data not scaled to [0, 1], where the stated
    two-branch guarantee does not apply.
    """
    algorithm = Algorithm(args.algorithm)
    hyper = _fixed_hyper(args, config, algorithm)
    grid = _resolve_grid(args, config, algorithm)
    burn_in = _setting(args, config, "burn_in", int)
    traces_dir = Path(args.traces)
    out_dir = Path(_setting(args, config, "out", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    names = _select_series(args, config)

    failures = []
    rows = []
    for name in names:
        trace_path = traces_dir / f"{name}.trace.csv"
        if not trace_path.exists():
            failures.append(f"{name}: missing trace file")
            continue
        obs, ens = io_files.load_series(args.data_dir, name,
                                        _series_units(config, name))
        if hyper is not None:
            trace = run_online(obs, ens, algorithm, hyperparameter=hyper)
            mode = "fixed"
        else:
            trace = run_online(obs, ens, algorithm,
                               tuner=TunerState(algorithm, ens.n_models, grid))
            mode = "adaptive"
        stored = _load_trace_forecasts(trace_path)
        if len(stored) != trace.n_steps or not np.array_equal(stored, trace.forecasts):
            failures.append(f"{name}: stored forecasts disagree with recomputation")

        if hyper is not None and algorithm in (Algorithm.RIDGE, Algorithm.EWA):
            try:
                if algorithm is Algorithm.RIDGE:
                    report = evaluation.check_ridge_bound(
                        trace, obs, ens, raise_on_violation=False)
                else:
                    b = max(np.abs(obs.values).max(), np.abs(ens.values).max())
                    if hyper > 1.0 / (2.0 * b * b) and b > 1.0:
                        report = None  # guarantee not applicable at this scale
                    else:
                        report = evaluation.check_ewa_bound(
                            trace, obs, ens, raise_on_violation=False)
                if report is not None and not report.passed:
                    failures.append(f"{name}: {algorithm.value} bound violated "
                                    f"by {-report.margin}")
            except ValueError as e:  # e.g. negative data for the EWA check
                print(f"evaluate: {name}: bound not checked ({e})")

        used_burn = burn_in if burn_in is not None else evaluation.default_burn_in(obs.n_steps)
        rows.append(_rmse_row(name, algorithm, mode,
                              evaluation.build_rmse_report(obs, ens, trace, used_burn)))

    io_files.write_rows_atomic(out_dir / "rmse_summary.csv", RMSE_HEADER, rows)
    for failure in failures:
        print(f"evaluate: FAIL {failure}", file=sys.stderr)
    print(f"evaluate: {len(rows)} series checked, {len(failures)} failures")
    return EVALUATE_FAILURE_EXIT if failures else 0


# ---------------------------------------------------------------------------
# tune and synth-gen
# ---------------------------------------------------------------------------

def cmd_tune(args, config) -> int:
    algorithm = Algorithm(args.algorithm)
    grid = _resolve_grid(args, config, algorithm)
    out_dir = Path(_setting(args, config, "out", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    names = _select_series(args, config)
    for name in names:
        obs, ens = io_files.load_series(args.data_dir, name,
                                        _series_units(config, name))
        trace = run_online(obs, ens, algorithm,
                           tuner=TunerState(algorithm, ens.n_models, grid))
        io_files.write_rows_atomic(
            out_dir / f"{name}.tuning.csv",
            ["step", "hyperparameter", "cumulative_loss"],
            [(int(t), io_files.fmt(h), io_files.fmt(c))
             for t, h, c in zip(trace.steps, trace.hyperparameters,
                                trace.cumulative_losses)])
    echo_rows = []
    for alg in (Algorithm.EWA, Algorithm.LASSO, Algorithm.RIDGE):
        g = grid if alg is algorithm else default_grid(alg)
        echo_rows.append([alg.value, io_files.fmt(g.lo), io_files.fmt(g.hi), g.count])
    io_files.write_rows_atomic(out_dir / "grids.csv",
                               ["algorithm", "lo", "hi", "count"], echo_rows)
    print(f"tune: {len(names)} series -> {out_dir}")
    return 0


def cmd_synth_gen(args, config) -> int:
    out_dir = Path(_setting(args, config, "out", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _setting(args, config, "seed", int, 0)
    if args.bundle:
        pairs = synth.standard_bundle(seed, n_models=args.n_models or 104,
                                      n_steps=args.n_steps or 127)
    else:
        pairs = synth.generate(synth.SynthConfig(
            seed=seed,
            n_models=args.n_models or 8,
            n_steps=args.n_steps or 120,
            n_series=args.n_series,
            regime=synth.Regime(args.regime),
            noise_sigma=args.noise_sigma,
            ensemble_bias=args.ensemble_bias,
        ))
    for obs, ens in pairs:
        name = obs.id.name
        io_files.write_observation_csv(out_dir / f"{name}.obs.csv", obs)
        io_files.write_ensemble_csv(out_dir / f"{name}.ens.csv", ens, obs.step_times)
    print(f"synth-gen: {len(pairs)} series -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, data: bool = True):
    if data:
        p.add_argument("--data-dir", required=True, help="directory of *.obs.csv/*.ens.csv")
        p.add_argument("--series", help="comma-separated series names (default: all)")
    p.add_argument("--out", help="output directory (default: .)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--jobs", type=int, help="series-level parallelism")


def _add_run_flags(p):
    p.add_argument("--algorithm", required=True,
                   choices=["ewa", "ridge", "lasso"])
    p.add_argument("--lambda", dest="lambda", type=float,
                   help="fixed regularization factor (ridge/lasso)")
    p.add_argument("--eta", type=float, help="fixed learning rate (ewa)")
    p.add_argument("--grid", help="tuning grid as lo:hi:count")
    p.add_argument("--burn-in", dest="burn_in", type=int,
                   help="steps excluded from RMSE (default: T // 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enscast",
        description="Robust online aggregation of ensemble forecasts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forecast-online", help="sequential one-step forecasts")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(fn=cmd_forecast_online)

    p = sub.add_parser("forecast-interval", help="multi-step interval forecasts")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--split", type=float, help="learning fraction (default 2/3)")
    p.add_argument("--clamp", type=parse_clamp_spec, help="physical bounds lo:hi")
    p.add_argument("--stability-threshold", dest="stability_threshold", type=float,
                   help="local-stability threshold in series units (default 150)")
    p.set_defaults(fn=cmd_forecast_interval)

    p = sub.add_parser("evaluate", help="recompute traces and certify bounds")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--traces", required=True, help="directory of *.trace.csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("tune", help="adaptive runs with per-step parameter choice")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("synth-gen", help="generate synthetic series")
    _add_common(p, data=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--bundle", action="store_true",
                   help="full 70-series benchmark bundle")
    p.add_argument("--n-models", dest="n_models", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--n-series", dest="n_series", type=int, default=1)
    p.add_argument("--regime", default="smooth_pressure",
                   choices=[r.value for r in synth.Regime])
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.0)
    p.add_argument("--ensemble-bias", dest="ensemble_bias", type=float, default=0.0)
    p.set_defaults(fn=cmd_synth_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = read_config_file(args.config) if getattr(args, "config", None) else {}
    try:
        return args.fn(args, config)
    except EnscastError as e:
        print(f"enscast: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
