"""One-step-ahead point aggregation: EWA, Ridge and Lasso.

All three algorithms combine the N model values at the next step with
weights fitted on the revealed past. The forecast is

    y_hat_T = sum_j w_{j,T} * m_{j,T}

where the weights are recomputed every step from data strictly before T:

* Ridge minimizes  lam * sum_j v_j^2 + sum_{t<T} (y_t - v . m_t)^2
  over unconstrained linear weights.
* Lasso minimizes  lam * sum_j |v_j| + sum_{t<T} (y_t - v . m_t)^2,
  which tends to zero out poorly performing models.
* EWA picks convex weights proportional to exp(-eta * L_j) where L_j is
  model j's cumulative square error so far.

At the very first step, with no history, all three return uniform
weights (Lasso adopts the same convention as the other two).

The solvers are written so that a batch solve over a vector of
hyperparameters produces, row for row, bit-identical results to
independent single-parameter solves; the online tuner relies on this.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import lars_path_gram

from .core import (
    AggregationTrace,
    Algorithm,
    EnsembleMatrix,
    ObservationSeries,
    WeightFlavor,
    WeightVector,
    validate_pair,
)
from .errors import LengthMismatch, NoConvergence, SolveFailure

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

LASSO_SWEEP_TOL = 1e-10
LASSO_MAX_SWEEPS = 100_000


# ---------------------------------------------------------------------------
# algorithm states (single-owner, sequentially mutated)
# ---------------------------------------------------------------------------

@dataclass
class EwaState:
    """Learning rate plus per-model cumulative square errors."""

    eta: float
    cumulative_losses: np.ndarray
    steps_seen: int = 0

    def update(self, y: float, column: np.ndarray) -> None:
        self.cumulative_losses += (column - y) ** 2
        self.steps_seen += 1


@dataclass
class RidgeState:
    """Regularization factor plus sufficient statistics of the past.

    ``gram`` accumulates sum_t m_t m_t^T and ``moment`` sum_t y_t m_t,
    which determine the penalized least-squares minimizer for any lam.
    """

    lam: float
    gram: np.ndarray
    moment: np.ndarray
    steps_seen: int = 0

    def update(self, y: float, column: np.ndarray) -> None:
        self.gram += np.outer(column, column)
        self.moment += y * column
        self.steps_seen += 1


@dataclass
class LassoState:
    """Regularization factor, sufficient statistics and warm start.

    The quadratic part of the objective depends on the past only through
    ``gram``/``moment``, so the raw history is not stored; ``steps_seen``
    tracks its length. ``warm`` is the previous solution, used to start
    coordinate descent at the next step.
    """

    lam: float
    gram: np.ndarray
    moment: np.ndarray
    steps_seen: int = 0
    warm: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.warm is None:
            self.warm = np.zeros(len(self.moment))

    def update(self, y: float, column: np.ndarray) -> None:
        self.gram += np.outer(column, column)
        self.moment += y * column
        self.steps_seen += 1


def make_state(algorithm: Algorithm, n_models: int, hyperparameter: float):
    algorithm = Algorithm(algorithm)
    if hyperparameter <= 0:
        raise ValueError("hyperparameter must be positive")
    if algorithm is Algorithm.EWA:
        return EwaState(hyperparameter, np.zeros(n_models))
    if algorithm is Algorithm.RIDGE:
        return RidgeState(hyperparameter, np.zeros((n_models, n_models)), np.zeros(n_models))
    if algorithm is Algorithm.LASSO:
        return LassoState(hyperparameter, np.zeros((n_models, n_models)), np.zeros(n_models))
    raise ValueError(f"no online state for algorithm {algorithm}")


def uniform_weights(n_models: int) -> np.ndarray:
    return np.full(n_models, 1.0 / n_models)


# ---------------------------------------------------------------------------
# EWA
# ---------------------------------------------------------------------------

def _ewa_weight_vector(losses: np.ndarray, eta: float) -> np.ndarray:
    # Shift by the minimum before exponentiating so the largest term is
    # exp(0) = 1 and the normalizer can never underflow to zero.
    shifted = losses - losses.min()
    w = np.exp(-eta * shifted)
    total = w.sum()
    if total == 0.0:  # unreachable after the shift; defensive only
        return uniform_weights(len(losses))
    return w / total


def ewa_weights(state: EwaState) -> WeightVector:
    """Convex weights exp(-eta L_j) / sum_k exp(-eta L_k)."""
    n = len(state.cumulative_losses)
    if state.steps_seen == 0:
        w = uniform_weights(n)
    else:
        w = _ewa_weight_vector(state.cumulative_losses, state.eta)
    return WeightVector(w, WeightFlavor.CONVEX, Algorithm.EWA, state.eta,
                        state.steps_seen + 1)


# ---------------------------------------------------------------------------
# Ridge
# ---------------------------------------------------------------------------

def _ridge_factor(gram: np.ndarray):
    """Symmetric eigendecomposition of the gram matrix.

    Eigenvalues are clamped at zero: the gram is positive semidefinite in
    exact arithmetic, so the clamp only removes rounding noise and keeps
    (gram + lam I) invertible for every lam > 0, however small.
    """
    try:
        d, q = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as e:  # finite symmetric input: not expected
        raise SolveFailure(f"eigendecomposition failed: {e}") from e
    return np.maximum(d, 0.0), q


def _ridge_apply(d: np.ndarray, q: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    return q @ ((q.T @ rhs) / (d + lam))


def ridge_solve(gram: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve (lam I + gram) x = rhs for symmetric PSD gram and lam > 0."""
    d, q = _ridge_factor(gram)
    x = _ridge_apply(d, q, rhs, lam)
    if not np.all(np.isfinite(x)):
        raise SolveFailure("regularized system is numerically singular")
    return x


def ridge_weights(state: RidgeState) -> WeightVector:
    """Unique minimizer of the penalized least-squares criterion."""
    n = len(state.moment)
    if state.steps_seen == 0:
        w = uniform_weights(n)
    else:
        w = ridge_solve(state.gram, state.moment, state.lam)
    return WeightVector(w, WeightFlavor.LINEAR, Algorithm.RIDGE, state.lam,
                        state.steps_seen + 1)


# ---------------------------------------------------------------------------
# Lasso (cyclic coordinate descent with soft thresholding)
# ---------------------------------------------------------------------------
#
# Coordinate update for the objective lam * |v|_1 + v' G v - 2 b' v:
# with r = b - G v (residual correlation) the minimizer in coordinate j is
#   v_j = soft(r_j + G_jj v_j, lam / 2) / G_jj.
# A full sweep visits coordinates cyclically; convergence is declared when
# the largest coordinate change in a sweep drops below
# LASSO_SWEEP_TOL * (1 + max_j |v_j|). The batch version runs one problem
# per row with its own lam and freezes each row the sweep it converges,
# so every row reproduces a standalone run exactly.
#
# Plain cyclic descent shuttles mass between nearly parallel models at a
# rate of order lam * gap / scale^3 per sweep, which on rank-deficient,
# highly correlated ensembles can mean millions of sweeps. Rows that are
# still unconverged after a chunk of sweeps are therefore handed the
# exact piecewise-linear solution path point for their penalty, accepted
# only after the fresh-residual sweep check. Every escalation is
# row-local and a function of (gram, moment, lam) alone, so batch and
# standalone solves of the same problem remain identical. r is also
# recomputed from scratch every few sweeps: the incremental updates lose
# absolute accuracy at large data scales and can otherwise settle into
# rounding limit cycles.

LASSO_REFRESH_PERIOD = 8
LASSO_POLISH_AFTER = 12


def _cd_chunk_py(gram, gdiag, moment, thr, v, r, active, sweeps, tol, budget, period):
    n = gram.shape[0]
    for _ in range(budget):
        if not active.any():
            break
        refresh = active & (sweeps > 0) & (sweeps % period == 0)
        for l in np.flatnonzero(refresh):
            r[l] = moment - gram @ v[l]
        max_change = np.zeros(len(thr))
        for j in range(n):
            gjj = gdiag[j]
            if gjj == 0.0:
                vnew = np.zeros(len(thr))
            else:
                cj = r[:, j] + v[:, j] * gjj
                vnew = np.sign(cj) * np.maximum(np.abs(cj) - thr, 0.0) / gjj
            delta = np.where(active, vnew - v[:, j], 0.0)
            if np.any(delta != 0.0):
                r -= delta[:, None] * gram[j][None, :]
                v[:, j] = np.where(active, vnew, v[:, j])
            np.maximum(max_change, np.abs(delta), out=max_change)
        sweeps += active
        vmax = np.abs(v).max(axis=1)
        active &= max_change > tol * (1.0 + vmax)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _cd_chunk_kernel(gram, gdiag, moment, thr, v, r, active, sweeps,
                         tol, budget, period):  # pragma: no cover
        n_prob, n = v.shape
        for it in range(budget):
            any_active = False
            for l in range(n_prob):
                if active[l]:
                    any_active = True
                    break
            if not any_active:
                break
            for l in range(n_prob):
                if not active[l]:
                    continue
                if sweeps[l] > 0 and sweeps[l] % period == 0:
                    for i in range(n):
                        acc = moment[i]
                        for j in range(n):
                            acc -= gram[i, j] * v[l, j]
                        r[l, i] = acc
                max_change = 0.0
                for j in range(n):
                    gjj = gdiag[j]
                    if gjj == 0.0:
                        vnew = 0.0
                    else:
                        cj = r[l, j] + v[l, j] * gjj
                        if cj > thr[l]:
                            vnew = (cj - thr[l]) / gjj
                        elif cj < -thr[l]:
                            vnew = (cj + thr[l]) / gjj
                        else:
                            vnew = 0.0
                    delta = vnew - v[l, j]
                    if delta != 0.0:
                        for i in range(n):
                            r[l, i] -= delta * gram[j, i]
                        v[l, j] = vnew
                    if abs(delta) > max_change:
                        max_change = abs(delta)
                sweeps[l] += 1
                vmax = 0.0
                for j in range(n):
                    if abs(v[l, j]) > vmax:
                        vmax = abs(v[l, j])
                if max_change <= tol * (1.0 + vmax):
                    active[l] = False


def _soft_threshold(c, thr):
    return np.sign(c) * np.maximum(np.abs(c) - thr, 0.0)


def _lasso_objective_stats(gram, moment, lam, v):
    return lam * np.abs(v).sum() + v @ gram @ v - 2.0 * moment @ v


def _lasso_lars_path(gram, moment):
    """Piecewise-linear solution path of the l1-penalized problem.

    Returns (alphas, coefs) with alphas descending, where the solution
    for a penalty lam is the path point at alpha = lam / 2 (linear
    interpolation between kinks is exact on the lasso path). None when
    the path solver fails; callers then stay with coordinate descent.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            alphas, _, coefs = lars_path_gram(
                Xy=moment.copy(), Gram=gram.copy(), n_samples=1,
                method="lasso", alpha_min=0.0, max_iter=8 * gram.shape[0])
        except Exception:  # degenerate geometry; descent remains in charge
            return None
    return alphas, coefs


def _interpolate_path(path, lam):
    alphas, coefs = path
    target = lam / 2.0
    if target >= alphas[0]:
        return np.zeros(coefs.shape[0])
    if target <= alphas[-1]:
        return coefs[:, -1].copy()
    k = int(np.searchsorted(-alphas, -target))
    a0, a1 = alphas[k - 1], alphas[k]
    if a0 == a1:
        return coefs[:, k].copy()
    frac = (a0 - target) / (a0 - a1)
    return coefs[:, k - 1] + frac * (coefs[:, k] - coefs[:, k - 1])


def _fresh_sweep_change(gram, gdiag, moment, thr, v):
    """Largest coordinate move a sweep from a fresh residual would make."""
    support = np.flatnonzero(v)
    corr = moment - gram[:, support] @ v[support] if len(support) else moment.copy()
    safe_diag = np.where(gdiag > 0.0, gdiag, 1.0)
    would_be = np.where(gdiag > 0.0,
                        _soft_threshold(corr + v * gdiag, thr) / safe_diag, 0.0)
    return float(np.abs(would_be - v).max())


class _GramFactor:
    """Cached eigendecomposition of the gram, shared by polish seeds.

    ``ls_point`` is a least-squares point computed with a vanishing ridge
    (1e-14 of the top eigenvalue) rather than a truncated pseudoinverse:
    keeping every mode pins its residual correlation at exactly mu * v,
    far below the sweep-acceptance margin, where truncation would leave
    the discarded modes' residuals just above it.
    """

    def __init__(self, gram, moment):
        d, q = np.linalg.eigh(gram)
        self.d = np.maximum(d, 0.0)
        self.q = q
        dmax = float(self.d[-1]) if len(self.d) else 0.0
        self.rank = int((self.d > 1e-12 * dmax).sum()) if dmax > 0.0 else 0
        self.mu = 1e-14 * dmax if dmax > 0.0 else 1.0
        # residual correlation at an apply_ridge point is mu * v, so a
        # ladder of shrinking mu trades weight norm against residual
        # until one lands inside the per-coordinate acceptance margin
        self.ls_points = [self.apply_ridge(moment, scale * dmax if dmax > 0.0 else 1.0)
                          for scale in (1e-14, 1e-16, 1e-18)]
        self.ls_point = self.ls_points[0]

    def apply_ridge(self, rhs, mu=None):
        return self.q @ ((self.q.T @ rhs) / (self.d + (self.mu if mu is None else mu)))


def _accepts(gram, gdiag, moment, thr, v, tol):
    return (_fresh_sweep_change(gram, gdiag, moment, thr, v)
            <= 0.5 * tol * (1.0 + np.abs(v).max(initial=0.0)))


def _support_refine(gram, gdiag, moment, thr, seed, tol, max_rounds=60):
    """Exact stationary solves on a seed's support until the sweep accepts.

    Each round solves G_SS w_S = b_S - thr * sign_S on the current
    support (minimum-norm), drops coordinates whose solved sign flips and
    admits the worst violating coordinate. When the restricted system is
    inconsistent the sign-restricted objective descends linearly along
    the null-space component of its right-hand side, so that flat
    direction is ridden until a coordinate exits the support.
    """
    v = seed.copy()
    for _ in range(max_rounds):
        if _accepts(gram, gdiag, moment, thr, v, tol):
            return v, True
        support = np.flatnonzero(v)
        corr = moment - gram[:, support] @ v[support] if len(support) else moment.copy()
        signs = np.sign(v)
        over = (np.abs(corr) > thr) & (signs == 0.0) & (gdiag > 0.0)
        if over.any():
            entrant = int(np.argmax(np.where(over, np.abs(corr), -np.inf)))
            signs[entrant] = np.sign(corr[entrant])
        idx = np.flatnonzero(signs)
        if len(idx) == 0:
            return v, False
        sub = gram[np.ix_(idx, idx)]
        rhs = moment[idx] - thr * signs[idx]
        d, q = np.linalg.eigh(sub)
        d = np.maximum(d, 0.0)
        mask = d > 1e-12 * d[-1] if d[-1] > 0.0 else np.zeros(len(d), bool)
        coeff = q.T @ rhs
        null_comp = rhs - q[:, mask] @ coeff[mask]
        vs = v[idx]
        if np.linalg.norm(null_comp) > 1e-9 * (1.0 + np.linalg.norm(rhs)):
            exiting = (signs[idx] * null_comp < 0.0) & (vs != 0.0)
            if not exiting.any():
                return v, False
            ts = -vs[exiting] / null_comp[exiting]
            pick = int(np.argmin(ts))
            v = np.zeros_like(v)
            v[idx] = vs + float(ts[pick]) * null_comp
            v[idx[np.flatnonzero(exiting)[pick]]] = 0.0
            continue
        w = q[:, mask] @ (coeff[mask] / d[mask])
        w[np.sign(w) != signs[idx]] = 0.0
        v = np.zeros_like(v)
        v[idx] = w
    return v, False


def _lasso_polish(gram, gdiag, moment, lam, v0, tol, path, factor):
    """Resolve a stalled coordinate-descent iterate via exact candidates.

    Plain cyclic descent shuttles mass between nearly parallel models at
    a vanishing rate, so stalled problems are finished from exact seeds:
    the path point at this penalty, the least-squares point nudged by a
    range-space step against the penalty's pull (covering penalties near
    or below float resolution), the plain least-squares point, and the
    current iterate. Each seed is accepted directly, or after support
    refinement when its support is small enough to iterate on, and only
    if a sweep from a fresh residual would move no coordinate by more
    than half the convergence budget. Otherwise the best-objective point
    is returned and descent continues.
    """
    thr = lam / 2.0
    seeds = [v0]
    if factor is not None:
        for ls in reversed(factor.ls_points):
            seeds.insert(0, ls)
        seeds.insert(0, factor.ls_point
                     - thr * factor.apply_ridge(np.sign(factor.ls_point)))
    if path is not None:
        seeds.insert(0, _interpolate_path(path, lam))
    for seed in seeds:
        if _accepts(gram, gdiag, moment, thr, seed, tol):
            return seed, True
    tried = list(seeds)
    support_cap = (factor.rank if factor is not None else len(moment)) + 16
    for seed in seeds:
        if np.count_nonzero(seed) > support_cap:
            continue
        refined, done = _support_refine(gram, gdiag, moment, thr, seed, tol)
        if done:
            return refined, True
        tried.append(refined)
    best = min(tried, key=lambda c: _lasso_objective_stats(gram, moment, lam, c))
    return best, False


def _lasso_cd(gram, moment, lams, v0, tol=LASSO_SWEEP_TOL, max_sweeps=LASSO_MAX_SWEEPS):
    """Batched cyclic coordinate descent, one lasso problem per row of v0.

    Returns (solutions, sweep counts). Raises NoConvergence, reporting the
    worst optimality residual, if any row exhausts the sweep cap.
    """
    lams = np.asarray(lams, dtype=float)
    v = np.array(v0, dtype=float)
    n_prob, n = v.shape
    r = np.empty_like(v)
    for l in range(n_prob):
        r[l] = moment - gram @ v[l]
    gdiag = np.ascontiguousarray(np.diag(gram))
    thr = lams / 2.0
    active = np.ones(n_prob, dtype=bool)
    sweeps = np.zeros(n_prob, dtype=np.int64)
    path = None
    factor = None
    budget = LASSO_POLISH_AFTER

    while active.any():
        if _HAVE_NUMBA:
            _cd_chunk_kernel(gram, gdiag, moment, thr, v, r, active, sweeps,
                             float(tol), budget, LASSO_REFRESH_PERIOD)
        else:
            _cd_chunk_py(gram, gdiag, moment, thr, v, r, active, sweeps,
                         tol, budget, LASSO_REFRESH_PERIOD)
        if not active.any():
            break
        if sweeps.max() >= max_sweeps:
            worst = max(lasso_kkt_residual(gram, moment, lams[l], v[l])
                        for l in np.flatnonzero(active))
            raise NoConvergence(
                f"lasso coordinate descent hit the {max_sweeps}-sweep cap "
                f"for lam in {lams[active].tolist()}", residual=worst)
        if path is None:
            path = _lasso_lars_path(gram, moment)
            factor = _GramFactor(gram, moment)
        for l in np.flatnonzero(active):
            polished, done = _lasso_polish(gram, gdiag, moment, float(lams[l]),
                                           v[l], tol, path, factor)
            v[l] = polished
            r[l] = moment - gram @ v[l]
            if done:
                active[l] = False
        budget = min(budget * 4, 65536)  # retry polish with falling frequency
    return v, sweeps


def lasso_objective(gram, moment, ysq: float, lam: float, v) -> float:
    """lam * |v|_1 + sum_t (y_t - v . m_t)^2 expressed via the statistics."""
    v = np.asarray(v, dtype=float)
    return float(lam * np.abs(v).sum() + v @ gram @ v - 2.0 * moment @ v + ysq)


def lasso_kkt_residual(gram, moment, lam: float, v) -> float:
    """Worst-case violation of the subgradient optimality conditions.

    For g = 2 (G v - b): coordinates with v_j != 0 need g_j = -lam sign(v_j),
    coordinates at zero need |g_j| <= lam. The violation is reported on the
    scale 1 + |lam| + max_j |g_j|, matching the solver contract.
    """
    v = np.asarray(v, dtype=float)
    g = 2.0 * (gram @ v - moment)
    scale = 1.0 + abs(lam) + np.abs(g).max(initial=0.0)
    resid = 0.0
    for j in range(len(v)):
        if v[j] != 0.0:
            resid = max(resid, abs(g[j] + lam * np.sign(v[j])))
        else:
            resid = max(resid, max(abs(g[j]) - lam, 0.0))
    return resid / scale


def lasso_weights(state: LassoState) -> WeightVector:
    """A minimizer of the l1-penalized least-squares criterion.

    Warm-started from the previous step's solution; the warm start is
    refreshed in place so consecutive calls converge immediately.
    """
    n = len(state.moment)
    if state.steps_seen == 0:
        w = uniform_weights(n)
    else:
        sols, _ = _lasso_cd(state.gram, state.moment, np.array([state.lam]),
                            state.warm[None, :])
        state.warm = sols[0].copy()
        w = sols[0]
    return WeightVector(w, WeightFlavor.LINEAR, Algorithm.LASSO, state.lam,
                        state.steps_seen + 1)


# ---------------------------------------------------------------------------
# aggregation and the sequential loop
# ---------------------------------------------------------------------------

def compute_weights(state) -> WeightVector:
    if isinstance(state, EwaState):
        return ewa_weights(state)
    if isinstance(state, RidgeState):
        return ridge_weights(state)
    if isinstance(state, LassoState):
        return lasso_weights(state)
    raise TypeError(f"unknown state type {type(state)!r}")


def aggregate(weights, ensemble_column) -> float:
    """Dot product of a weight vector with the model values at one step."""
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights)
    column = np.asarray(ensemble_column, dtype=float)
    if len(w) != len(column):
        raise LengthMismatch(f"{len(w)} weights vs {len(column)} model values")
    return float(np.dot(w, column))


def run_online(obs: ObservationSeries, ens: EnsembleMatrix, algorithm,
               hyperparameter: float | None = None, tuner=None) -> AggregationTrace:
    """Run the sequential forecasting protocol over the full series.

    At each step t the weights are computed from data strictly before t,
    the forecast for step t is emitted, and only then is y_t revealed to
    the state (causality). Provide either a fixed ``hyperparameter`` or a
    ``tuner`` (see :mod:`enscast.tuning`) that re-selects it every step
    from past cumulative loss.
    """
    obs, ens = validate_pair(obs, ens)
    algorithm = Algorithm(algorithm)
    if (hyperparameter is None) == (tuner is None):
        raise ValueError("provide exactly one of hyperparameter or tuner")
    n_steps = obs.n_steps
    forecasts = np.empty(n_steps)
    losses = np.empty(n_steps)
    hypers = np.empty(n_steps)
    weight_records = []

    state = None if tuner is not None else make_state(algorithm, ens.n_models, hyperparameter)
    for t in range(1, n_steps + 1):
        column = ens.column(t)
        y = obs.values[t - 1]
        try:
            if tuner is not None:
                hyper, wvec, fc = tuner.select_and_forecast(column)
                tuner.update(y, column)
            else:
                wvec = compute_weights(state)
                hyper = hyperparameter
                fc = aggregate(wvec, column)
                state.update(y, column)
        except (SolveFailure, NoConvergence) as e:
            raise type(e)(f"step {t}: {e}") from e
        forecasts[t - 1] = fc
        losses[t - 1] = (fc - y) ** 2
        hypers[t - 1] = hyper
        weight_records.append(wvec)

    return AggregationTrace(np.arange(1, n_steps + 1), forecasts, losses,
                            hypers, tuple(weight_records))
