"""Reference laws for the heavy-traffic limit objects.

Closed forms and Monte Carlo samplers for one-sided reflected Brownian
motion with drift -lambda*alpha and variance 2*lambda, its exponential
stationary law, the geometric lower-bound tail, and the Poisson Chernoff
tail bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import paths, rng
from .errors import (
    InvalidValue,
    RhoOutOfRange,
    StepTooCoarse,
    TailBoundOrder,
    ZeroAlpha,
)


@dataclass(frozen=True)
class RbmParams:
    """Reflected-Brownian-motion parameters in the heavy-traffic scaling."""

    lambda_limit: float
    alpha: float

    def __post_init__(self):
        if self.lambda_limit <= 0:
            raise InvalidValue("limit arrival rate must be positive")
        if self.alpha < 0:
            raise InvalidValue("heavy-traffic gap must be nonnegative")

    @property
    def drift(self) -> float:
        return -self.lambda_limit * self.alpha

    @property
    def variance(self) -> float:
        return 2.0 * self.lambda_limit


def rbm_marginal_cdf(params: RbmParams, t: float, x) -> np.ndarray | float:
    """CDF at time t of RBM started at 0: P(reflected value <= x).

    Uses the classical closed form
        Phi((x - m t)/(s sqrt(t))) - exp(2 m x / s^2) Phi((-x - m t)/(s sqrt(t)))
    with drift m and variance s^2, clamped into [0, 1].  Negative x yields 0.
    """
    if t <= 0:
        raise InvalidValue("marginal CDF needs t > 0")
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(x_arr)):
        raise InvalidValue("NaN evaluation point")
    m = params.drift
    s = math.sqrt(params.variance)
    st = s * math.sqrt(t)
    # exp(2 m x / s^2) can overflow for strongly negative drift and large x;
    # the log-sum form is stable: the product term is exp(log-phi + 2mx/s^2).
    with np.errstate(over="ignore", under="ignore"):
        first = norm.cdf((x_arr - m * t) / st)
        log_tail = norm.logcdf((-x_arr - m * t) / st) + 2.0 * m * x_arr / (s * s)
        out = first - np.exp(log_tail)
    out = np.where(x_arr < 0, 0.0, np.clip(out, 0.0, 1.0))
    return float(out) if np.isscalar(x) else out


def rbm_stationary_cdf(params: RbmParams, x) -> np.ndarray | float:
    """Stationary CDF of the RBM: exponential with rate alpha."""
    if params.alpha <= 0:
        raise ZeroAlpha("stationary law exists only for alpha > 0")
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(x_arr)):
        raise InvalidValue("NaN evaluation point")
    out = np.where(x_arr < 0, 0.0, -np.expm1(-params.alpha * x_arr))
    return float(out) if np.isscalar(x) else out


def rbm_sample_path(
    params: RbmParams, horizon: float, step: float, seed: int, stream_path: tuple = ()
) -> paths.StatePath:
    """Euler path of the RBM with exact per-step reflection at 0."""
    if horizon <= 0:
        raise InvalidValue("horizon must be positive")
    if step > horizon / 2**10:
        raise StepTooCoarse(f"step {step} must be <= horizon/2^10 = {horizon / 2**10}")
    gen = rng.stream(seed, rng.NOISE, *stream_path)
    n_steps = int(round(horizon / step))
    incr = params.drift * step + math.sqrt(params.variance * step) * gen.standard_normal(
        n_steps
    )
    vals = np.empty(n_steps + 1)
    vals[0] = 0.0
    z = 0.0
    for i in range(n_steps):
        z = max(z + incr[i], 0.0)
        vals[i + 1] = z
    return paths.StatePath(
        event_times=np.arange(n_steps + 1) * step,
        states=vals,
        horizon=horizon,
    )


def rbm_excursion_stats(path: paths.StatePath, eps: float):
    """Excursion functionals of a sampled path at level eps.

    Returns (start, duration, max_height) of the first excursion reaching
    eps; duration is None when the excursion is not completed within the
    horizon.
    """
    start = paths.excursion_start(path, eps)
    exc = paths.excursion_reaching(path, eps)
    duration = exc.stopped_at
    max_height = float(exc.norms.max())
    return start, duration, max_height


def batch_excursion_stats(
    params: RbmParams, eps: float, n_paths: int, horizon: float, step: float, seed: int
):
    """Excursion functionals over many independent sampled paths.

    Vectorized across paths; zero values are exact because reflection is a
    pointwise max with 0.  Same conventions as rbm_excursion_stats.
    Returns arrays (start, duration, max_height) with NaN duration for
    excursions not completed by the horizon.
    """
    if step > horizon / 2**10:
        raise StepTooCoarse(f"step {step} must be <= horizon/2^10 = {horizon / 2**10}")
    gen = rng.stream(seed, rng.NOISE)
    n_steps = int(round(horizon / step))
    sigma = math.sqrt(params.variance * step)
    drift = params.drift * step
    z = np.zeros(n_paths)
    last_zero = np.zeros(n_paths)
    t_up = np.full(n_paths, np.nan)
    g_eps = np.full(n_paths, np.nan)
    t_zero_after = np.full(n_paths, np.nan)
    max_h = np.zeros(n_paths)
    for i in range(1, n_steps + 1):
        z = np.maximum(z + drift + sigma * gen.standard_normal(n_paths), 0.0)
        t = i * step
        pre = np.isnan(t_up)
        at_zero = z == 0.0
        last_zero[pre & at_zero] = t
        crossed = pre & (z >= eps)
        t_up[crossed] = t
        g_eps[crossed] = last_zero[crossed]
        post = ~np.isnan(t_up) & np.isnan(t_zero_after)
        np.maximum(max_h, np.where(post, z, 0.0), out=max_h)
        done = post & at_zero
        t_zero_after[done] = t - t_up[done]
    return g_eps, t_zero_after, max_h


def marginal_mc_probabilities(
    params: RbmParams,
    t: float,
    xs: np.ndarray,
    n_paths: int,
    n_steps: int,
    seed: int,
    batch: int = 200_000,
    bridge: bool = True,
) -> np.ndarray:
    """Monte Carlo estimate of P(reflected value at t <= x) by Euler paths.

    Independent simulation oracle for rbm_marginal_cdf.  With bridge=True
    (default) the running minimum between grid points is sampled exactly from
    the Brownian-bridge minimum law, which removes the O(sqrt(step)) boundary
    bias of plain per-step reflection and makes the terminal reflected value
    exact in law; bridge=False keeps the plain maximum-with-zero scheme.
    """
    xs = np.asarray(xs, dtype=float)
    step = t / n_steps
    sigma = math.sqrt(params.variance * step)
    drift = params.drift * step
    counts = np.zeros(len(xs))
    done = 0
    chunk_id = 0
    while done < n_paths:
        m = min(batch, n_paths - done)
        gen = rng.stream(seed, rng.NOISE, chunk_id)
        if bridge:
            w = np.zeros(m)
            run_min = np.zeros(m)
            for _ in range(n_steps):
                a = w
                w = w + drift + sigma * gen.standard_normal(m)
                u = gen.random(m)
                mins = 0.5 * (
                    a + w - np.sqrt((w - a) ** 2 - 2.0 * params.variance * step * np.log(u))
                )
                np.minimum(run_min, mins, out=run_min)
            z = w - np.minimum(run_min, 0.0)
        else:
            z = np.zeros(m)
            for _ in range(n_steps):
                z = np.maximum(z + drift + sigma * gen.standard_normal(m), 0.0)
        counts += (z[None, :] <= xs[:, None]).sum(axis=1)
        done += m
        chunk_id += 1
    return counts / n_paths


def geometric_tail(rho: float, q: int) -> float:
    """P(G >= q) for a geometric variable with success parameter rho."""
    if not (0.0 < rho < 1.0):
        raise RhoOutOfRange(f"rho must lie in (0, 1), got {rho}")
    if q < 0:
        raise InvalidValue("q must be a nonnegative integer")
    return float(rho**q)


def poisson_tail_bound(u: float, v: float) -> float:
    """Chernoff bound exp(-u h(v/u)) on P(Poisson(u) >= v), valid for v >= u."""
    if u <= 0:
        raise InvalidValue("Poisson parameter must be positive")
    if v < u:
        raise TailBoundOrder(f"bound requires v >= u, got v={v} < u={u}")
    ratio = v / u
    h = ratio * math.log(ratio) + 1.0 - ratio
    return math.exp(-u * h)
