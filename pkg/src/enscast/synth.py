"""Synthetic reference-versus-ensemble data at desk scale.

Each series has a smooth latent truth; the ensemble members are smooth
parameter perturbations of it, and the reference observations are the
truth plus optional observation noise and an optional systematic offset
(so the truth can be pushed outside the ensemble hull). Three regimes
cover the qualitative behaviours of well production data: a smoothly
declining pressure, a rate with a sudden breakthrough drop at a
model-specific time, and a rate with a shut-in segment at zero.

Generation is deterministic: equal configs produce bit-identical data
on any platform (PCG64 streams keyed by seed and series index).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import EnsembleMatrix, ObservationSeries, PropertyKind, SeriesId

TOTAL_DAYS = 3650.0


class Regime(str, Enum):
    SMOOTH_PRESSURE = "smooth_pressure"
    RATE_WITH_BREAKTHROUGH = "rate_with_breakthrough"
    RATE_WITH_SHUTIN = "rate_with_shutin"


REGIME_BOUNDS = {
    Regime.SMOOTH_PRESSURE: (600.0, 2600.0),
    Regime.RATE_WITH_BREAKTHROUGH: (0.0, 2400.0),
    Regime.RATE_WITH_SHUTIN: (0.0, 2400.0),
}

_REGIME_KIND = {
    Regime.SMOOTH_PRESSURE: PropertyKind.BOTTOMHOLE_PRESSURE,
    Regime.RATE_WITH_BREAKTHROUGH: PropertyKind.OIL_RATE,
    Regime.RATE_WITH_SHUTIN: PropertyKind.WATER_RATE,
}

_KIND_UNITS = {
    PropertyKind.BOTTOMHOLE_PRESSURE: "psi",
    PropertyKind.OIL_RATE: "bbl/day",
    PropertyKind.WATER_RATE: "bbl/day",
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_models: int = 8
    n_steps: int = 120
    n_series: int = 1
    regime: Regime = Regime.SMOOTH_PRESSURE
    noise_sigma: float = 0.0
    ensemble_bias: float = 0.0
    include_truth_model: bool = False
    well_prefix: str = "P"

    def __post_init__(self):
        if self.n_models < 2:
            raise ValueError("need at least 2 models")
        if self.n_steps < 40:
            raise ValueError("need at least 40 steps")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def _pressure_curve(tau, p0, p_inf, tc, amp, freq, phase):
    return p_inf + (p0 - p_inf) * np.exp(-tau / tc) + amp * np.sin(
        2.0 * np.pi * freq * tau + phase)


def _breakthrough_curve(tau, q0, tau_b, jump, decay):
    ramp = np.clip(tau / 0.04, 0.0, 1.0)
    q = q0 * ramp
    post = tau >= tau_b
    q[post] = q0 * jump * np.exp(-(tau[post] - tau_b) / decay)
    return q


def _shutin_curve(tau, ws, tau_bt, spread, shut_start, shut_len):
    q = ws / (1.0 + np.exp(-(tau - tau_bt) / spread))
    q[(tau >= shut_start) & (tau < shut_start + shut_len)] = 0.0
    return q


def _draw_trajectories(rng, regime, n_steps, n_models):
    """Latent truth plus n_models smooth perturbations of it."""
    tau = np.linspace(0.0, 1.0, n_steps)
    if regime is Regime.SMOOTH_PRESSURE:
        p0 = rng.uniform(2300.0, 2500.0)
        p_inf = rng.uniform(1400.0, 2000.0)
        tc = rng.uniform(0.2, 0.6)
        amp = rng.uniform(5.0, 30.0)
        freq = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        truth = _pressure_curve(tau, p0, p_inf, tc, amp, freq, phase)
        models = np.empty((n_models, n_steps))
        for j in range(n_models):
            models[j] = _pressure_curve(
                tau,
                p0 + rng.normal(0.0, 60.0),
                p_inf + rng.normal(0.0, 120.0),
                tc * np.exp(rng.normal(0.0, 0.2)),
                amp * rng.uniform(0.5, 1.5),
                freq * rng.uniform(0.9, 1.1),
                phase + rng.normal(0.0, 0.6),
            )
    elif regime is Regime.RATE_WITH_BREAKTHROUGH:
        q0 = rng.uniform(1600.0, 2100.0)
        tau_b = rng.uniform(0.35, 0.7)
        jump = rng.uniform(0.55, 0.85)
        decay = rng.uniform(0.15, 0.4)
        truth = _breakthrough_curve(tau, q0, tau_b, jump, decay)
        models = np.empty((n_models, n_steps))
        for j in range(n_models):
            models[j] = _breakthrough_curve(
                tau,
                q0 * rng.uniform(0.85, 1.15),
                float(np.clip(tau_b + rng.normal(0.0, 0.07), 0.05, 0.95)),
                jump * rng.uniform(0.85, 1.15),
                decay * np.exp(rng.normal(0.0, 0.25)),
            )
    elif regime is Regime.RATE_WITH_SHUTIN:
        ws = rng.uniform(800.0, 1800.0)
        tau_bt = rng.uniform(0.25, 0.55)
        spread = rng.uniform(0.05, 0.1)
        shut_start = rng.uniform(0.6, 0.8)
        shut_len = rng.uniform(0.05, 0.12)
        truth = _shutin_curve(tau, ws, tau_bt, spread, shut_start, shut_len)
        models = np.empty((n_models, n_steps))
        for j in range(n_models):
            models[j] = _shutin_curve(
                tau,
                ws * rng.uniform(0.8, 1.2),
                float(np.clip(tau_bt + rng.normal(0.0, 0.05), 0.05, 0.9)),
                spread * np.exp(rng.normal(0.0, 0.2)),
                float(np.clip(shut_start + rng.normal(0.0, 0.03), 0.4, 0.9)),
                shut_len * rng.uniform(0.8, 1.3),
            )
    else:
        raise ValueError(f"unknown regime {regime}")
    return truth, models


def generate(config: SynthConfig):
    """Generate ``n_series`` (ObservationSeries, EnsembleMatrix) pairs."""
    regime = Regime(config.regime)
    lo, hi = REGIME_BOUNDS[regime]
    kind = _REGIME_KIND[regime]
    times = np.linspace(0.0, TOTAL_DAYS, config.n_steps)
    pairs = []
    for s in range(config.n_series):
        rng = np.random.default_rng([config.seed, s])
        truth, models = _draw_trajectories(rng, regime, config.n_steps,
                                           config.n_models)
        if config.include_truth_model:
            models[0] = truth
        obs = truth + config.ensemble_bias
        if config.noise_sigma > 0:
            obs = obs + rng.normal(0.0, config.noise_sigma, config.n_steps)
        obs = np.clip(obs, lo, hi)
        models = np.clip(models, lo, hi)
        sid = SeriesId(kind, f"{config.well_prefix}{s + 1}", _KIND_UNITS[kind])
        pairs.append((ObservationSeries(sid, obs, times),
                      EnsembleMatrix(sid, models)))
    return pairs


def standard_bundle(seed: int, n_models: int = 104, n_steps: int = 127):
    """The full 70-series benchmark bundle.

    10 injector pressures, 20 producer pressures, 20 oil rates and
    20 water rates, mirroring the usual property mix of a waterflooded
    field benchmark.
    """
    groups = [
        (Regime.SMOOTH_PRESSURE, "I", 10, 6.0),
        (Regime.SMOOTH_PRESSURE, "P", 20, 6.0),
        (Regime.RATE_WITH_BREAKTHROUGH, "P", 20, 12.0),
        (Regime.RATE_WITH_SHUTIN, "P", 20, 12.0),
    ]
    pairs = []
    for g, (regime, prefix, count, sigma) in enumerate(groups):
        config = SynthConfig(
            seed=seed + 7919 * g,
            n_models=n_models,
            n_steps=n_steps,
            n_series=count,
            regime=regime,
            noise_sigma=sigma,
            well_prefix=prefix,
        )
        pairs.extend(generate(config))
    return pairs
