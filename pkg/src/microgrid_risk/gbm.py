"""Geometric Brownian motion model of renewable generation power.

The generation power follows

    dP = mu_g * P dt + sigma_g * P dW,

so that ``log P(t)`` is Gaussian with mean ``log p0 + (mu_g - sigma_g**2 / 2) t``
and variance ``sigma_g**2 t``. Paths are sampled with the exact lognormal
transition, which carries no discretization bias at any step size.

Every path is driven by its own random stream, keyed by ``(seed, stream)``
through :class:`numpy.random.SeedSequence`. Path ``i`` of an ensemble is
therefore bit-identical to ``simulate_path(..., seed, stream=i)`` and does not
depend on how many other paths were drawn alongside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_finite, check_nonnegative, check_positive
from .exceptions import InvalidArgumentError

# Below this |rate * dt| the growth factor switches to its Taylor series.
_SERIES_CUTOFF = 1e-8


@dataclass(frozen=True)
class GbmParams:
    """Drift, volatility and initial value of the generation process.

    Parameters
    ----------
    p0 : float
        Initial generation power in kW, strictly positive.
    mu_g : float
        Drift rate in 1/hour; any sign.
    sigma_g : float
        Volatility rate in 1/sqrt(hour), non-negative.
    """

    p0: float
    mu_g: float
    sigma_g: float

    def __post_init__(self):
        object.__setattr__(self, "p0", check_positive("p0", self.p0))
        object.__setattr__(self, "mu_g", check_finite("mu_g", self.mu_g))
        object.__setattr__(self, "sigma_g", check_nonnegative("sigma_g", self.sigma_g))

    def with_p0(self, p0):
        return GbmParams(p0=p0, mu_g=self.mu_g, sigma_g=self.sigma_g)


@dataclass(frozen=True)
class GbmPath:
    """A sampled generation trajectory on a strictly increasing time grid."""

    times: np.ndarray
    values: np.ndarray
    seed: int | None = None
    stream: int = 0
    params: GbmParams | None = field(default=None, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise InvalidArgumentError("times and values must be 1-D arrays of equal length >= 2")
        if times[0] != 0.0:
            raise InvalidArgumentError("path must start at t = 0")
        if np.any(np.diff(times) <= 0.0):
            raise InvalidArgumentError("path times must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise InvalidArgumentError("path values must be finite and > 0")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def index_at(self, t):
        """Index of the last grid point at or before ``t`` (no look-ahead)."""
        t = float(t)
        if t < 0.0 or t > self.horizon * (1 + 1e-12):
            raise InvalidArgumentError(f"t={t} outside path range [0, {self.horizon}]")
        # Tolerate roundoff in accumulated interval endpoints.
        slack = 1e-12 * max(1.0, abs(t))
        return int(np.searchsorted(self.times, t + slack, side="right") - 1)

    def value_at(self, t):
        return float(self.values[self.index_at(t)])


def path_rng(seed, stream=0):
    """Generator for the independent random stream ``stream`` of ``seed``."""
    if seed is None:
        raise InvalidArgumentError("a seed is required for stochastic sampling")
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or stream < 0:
        raise InvalidArgumentError("seed and stream must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _check_grid(horizon, n_steps):
    horizon = check_positive("horizon", horizon)
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidArgumentError(f"n_steps must be an integer >= 1, got {n_steps!r}")
    return horizon, int(n_steps)


def time_grid(horizon, n_steps):
    horizon, n_steps = _check_grid(horizon, n_steps)
    times = np.linspace(0.0, horizon, n_steps + 1)
    times[-1] = horizon
    return times


def _exact_steps(params, dt, normals):
    log_steps = (params.mu_g - 0.5 * params.sigma_g**2) * dt + params.sigma_g * math.sqrt(dt) * normals
    log_path = np.concatenate(
        [np.zeros(normals.shape[:-1] + (1,)), np.cumsum(log_steps, axis=-1)], axis=-1
    )
    return params.p0 * np.exp(log_path)


def simulate_path(params, horizon, n_steps, seed, stream=0):
    """Sample one path on a uniform grid of ``n_steps + 1`` points.

    Each step applies ``P[k+1] = P[k] * exp((mu - sigma**2/2) dt + sigma sqrt(dt) Z[k])``
    with ``Z[k]`` standard normal. The result is reproducible for a fixed
    ``(seed, stream)``.
    """
    times = time_grid(horizon, n_steps)
    normals = path_rng(seed, stream).standard_normal(n_steps)
    values = _exact_steps(params, times[1] - times[0], normals)
    values[0] = params.p0
    return GbmPath(times=times, values=values, seed=int(seed), stream=int(stream), params=params)


def simulate_paths(params, horizon, n_steps, n_paths, seed):
    """Sample ``n_paths`` independent paths; returns ``(times, values)``.

    ``values`` has shape ``(n_paths, n_steps + 1)`` and row ``i`` equals
    ``simulate_path(params, horizon, n_steps, seed, stream=i).values``.
    """
    times = time_grid(horizon, n_steps)
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidArgumentError(f"n_paths must be an integer >= 1, got {n_paths!r}")
    normals = np.empty((int(n_paths), times.size - 1))
    for i in range(int(n_paths)):
        normals[i] = path_rng(seed, i).standard_normal(times.size - 1)
    values = _exact_steps(params, times[1] - times[0], normals)
    values[:, 0] = params.p0
    return times, values


def refine_paths(params, times, values, seed):
    """Halve the step of sampled paths while keeping their Brownian increments.

    Midpoints are drawn from the exact Brownian bridge of ``log P`` between
    neighbouring grid values, so the coarse points of the refined path are
    exactly the input values. The drift cancels inside the bridge, so only
    ``sigma_g`` enters. ``seed`` keys the bridge streams (one per path).
    """
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    dts = np.diff(times)
    logs = np.log(values)
    normals = np.empty((values.shape[0], dts.size))
    for i in range(values.shape[0]):
        normals[i] = path_rng(seed, i).standard_normal(dts.size)
    mid = 0.5 * (logs[:, :-1] + logs[:, 1:]) + 0.5 * params.sigma_g * np.sqrt(dts) * normals

    fine_times = np.empty(2 * times.size - 1)
    fine_times[0::2] = times
    fine_times[1::2] = times[:-1] + 0.5 * dts
    fine = np.empty((values.shape[0], fine_times.size))
    fine[:, 0::2] = values
    fine[:, 1::2] = np.exp(mid)
    return fine_times, fine


def _check_time(t):
    return check_nonnegative("t", t)


def mean_at(params, t):
    """Expected generation power ``p0 * exp(mu_g * t)``."""
    t = _check_time(t)
    return params.p0 * math.exp(params.mu_g * t)


def variance_at(params, t):
    """Variance ``p0**2 exp(2 mu_g t) (exp(sigma_g**2 t) - 1)``.

    The variance starts at zero and grows exponentially with ``t``, which is
    why the reserve planner splits long horizons into short sub-intervals.
    """
    t = _check_time(t)
    return params.p0**2 * math.exp(2.0 * params.mu_g * t) * math.expm1(params.sigma_g**2 * t)


def growth_average(rate, dt):
    """Time average of ``exp(rate * s)`` over ``s`` in ``[0, dt]``.

    Equals ``(exp(rate*dt) - 1) / (rate*dt)`` and tends to 1 as ``rate*dt -> 0``.
    """
    x = rate * dt
    if abs(x) < _SERIES_CUTOFF:
        return 1.0 + x / 2.0 + x * x / 6.0
    return math.expm1(x) / x


def conditional_mean_integral(params, p_obs, dt, *, t_prev=0.0, literal=False):
    """Average of ``E[P(t) | P(t_prev) = p_obs]`` over ``[t_prev, t_prev + dt]``.

    Under the Markov property the conditional mean is
    ``p_obs * exp(mu_g (t - t_prev))``, giving ``p_obs * growth_average(mu_g, dt)``.

    With ``literal=True`` the result is additionally multiplied by
    ``exp(mu_g * t_prev)``; this reproduces the battery-count formula exactly
    as printed in the source derivation, where the observed value appears to
    be rescaled as if it were the initial value.
    """
    p_obs = check_positive("p_obs", p_obs)
    dt = check_positive("dt", dt)
    value = p_obs * growth_average(params.mu_g, dt)
    if literal:
        value *= math.exp(params.mu_g * check_nonnegative("t_prev", t_prev))
    return value


def conditional_second_moment_integral(params, p_obs, dt):
    """Average of ``E[P(t)**2 | P(t_prev) = p_obs]`` over an interval of length ``dt``."""
    p_obs = check_positive("p_obs", p_obs)
    dt = check_positive("dt", dt)
    return p_obs**2 * growth_average(2.0 * params.mu_g + params.sigma_g**2, dt)
