"""Battery reserve planning for a constant energy demand under GBM generation.

The horizon ``[0, T]`` is cut into sub-intervals. At the start of each one the
current generation ``p_obs`` is observed, and two quantities are chosen:

* the interval length ``dt``: the largest length for which the time-averaged
  expected squared mismatch ``(P + k P_b - D_e)**2`` stays below a tolerance;
* the battery block count ``k``: the minimizer of that mismatch over ``k >= 0``,

    k = max(0, (D_e - mean_{[0, dt]} E[P | p_obs]) / P_b).

The mismatch has a closed form because the first two conditional moments of
GBM are exponentials in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_nonnegative, check_positive
from .exceptions import InvalidArgumentError, NumericalError
from .gbm import GbmParams, conditional_mean_integral, growth_average

_MAX_BISECT = 200
_FLOOR_FRACTION = 1e-4


@dataclass(frozen=True)
class ReserveProblem:
    """Inputs of the reserve planner, in physical units.

    Parameters
    ----------
    gbm : GbmParams
    demand : float
        Constant demand ``D_e`` in kW.
    block_power : float
        Power of one battery block ``P_b`` in kW.
    horizon : float
        Planning horizon ``T`` in hours.
    tolerance : float
        Bound on the time-averaged expected squared mismatch, in kW**2.
        Use :meth:`from_per_unit` to give it in per-unit**2.
    literal : bool
        Evaluate the block count with the extra ``exp(mu_g t_start)`` factor
        of the printed formula instead of the Markov-consistent one.
    """

    gbm: GbmParams
    demand: float
    block_power: float
    horizon: float
    tolerance: float
    literal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "demand", check_nonnegative("demand", self.demand))
        object.__setattr__(self, "block_power", check_positive("block_power", self.block_power))
        object.__setattr__(self, "horizon", check_positive("horizon", self.horizon))
        object.__setattr__(self, "tolerance", check_positive("tolerance", self.tolerance))

    @classmethod
    def from_per_unit(cls, gbm, demand, block_power, horizon, epsilon_pu, base_power, literal=False):
        base_power = check_positive("base_power", base_power)
        return cls(gbm, demand, block_power, horizon, epsilon_pu * base_power**2, literal)

    @property
    def dt_floor(self):
        return self.horizon * _FLOOR_FRACTION


def _check_obs(p_obs, dt):
    return check_positive("p_obs", p_obs), check_positive("dt", dt)


def unclamped_blocks(problem, p_obs, dt, *, t_start=0.0):
    mean = conditional_mean_integral(
        problem.gbm, p_obs, dt, t_prev=t_start, literal=problem.literal
    )
    return (problem.demand - mean) / problem.block_power


def optimal_blocks(problem, p_obs, dt, *, t_start=0.0):
    """Real-valued block count minimizing the expected squared mismatch over ``dt``."""
    _check_obs(p_obs, dt)
    return max(0.0, unclamped_blocks(problem, p_obs, dt, t_start=t_start))


def expected_sq_mismatch(problem, p_obs, k, dt):
    """Time average over ``[0, dt]`` of ``E[(P + k P_b - D_e)**2 | P(0) = p_obs]`` in kW**2."""
    p_obs, dt = _check_obs(p_obs, dt)
    k = check_nonnegative("k", k)
    g = problem.gbm
    m1 = growth_average(g.mu_g, dt)
    m2 = growth_average(2.0 * g.mu_g + g.sigma_g**2, dt)
    offset = k * problem.block_power - problem.demand
    # Spread term plus squared bias; avoids cancelling the two large moments.
    return p_obs**2 * (m2 - m1 * m1) + (p_obs * m1 + offset) ** 2


def _mismatch_at_length(problem, p_obs, dt, t_start):
    k = optimal_blocks(problem, p_obs, dt, t_start=t_start)
    return expected_sq_mismatch(problem, p_obs, k, dt)


def interval_length(problem, p_obs, *, t_start=0.0, remaining=None):
    """Longest sub-interval whose expected squared mismatch stays within tolerance.

    The search runs over ``[dt_floor, remaining]`` where ``dt_floor`` is
    ``horizon * 1e-4`` and ``remaining`` defaults to ``horizon - t_start``. If
    the tolerance is already exceeded at the floor, the floor is returned and
    the caller is expected to flag the interval.
    """
    p_obs = check_positive("p_obs", p_obs)
    if remaining is None:
        remaining = problem.horizon - t_start
    hi = check_positive("remaining", remaining)
    eps = problem.tolerance

    if _mismatch_at_length(problem, p_obs, hi, t_start) <= eps:
        return hi
    lo = min(problem.dt_floor, hi)
    if _mismatch_at_length(problem, p_obs, lo, t_start) > eps:
        return lo

    for _ in range(_MAX_BISECT):
        if hi - lo <= 1e-12 * hi:
            return lo
        mid = 0.5 * (lo + hi)
        if _mismatch_at_length(problem, p_obs, mid, t_start) <= eps:
            lo = mid
        else:
            hi = mid
    raise NumericalError("interval length bisection did not converge")


@dataclass(frozen=True)
class ReserveInterval:
    t_start: float
    t_end: float
    k_blocks: float
    p_obs: float
    expected_sq_mismatch: float
    realized_sq_mismatch: float
    realized_deficit: float
    flagged: bool
    rounding_penalty: float = 0.0

    @property
    def length(self):
        return self.t_end - self.t_start


@dataclass
class ReservePlan:
    """Contiguous sub-intervals with their block counts and realized diagnostics."""

    intervals: list = field(default_factory=list)
    horizon: float = 0.0
    tolerance: float = 0.0
    block_power: float = 1.0

    @property
    def total_covered(self):
        return self.intervals[-1].t_end if self.intervals else 0.0

    @property
    def n_flagged(self):
        return sum(iv.flagged for iv in self.intervals)

    def column(self, name):
        return np.array([getattr(iv, name) for iv in self.intervals], dtype=float)

    def battery_power(self, times):
        """Battery power ``k P_b`` in force at each of ``times`` (right-open intervals)."""
        starts = self.column("t_start")
        idx = np.searchsorted(starts, np.asarray(times, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(self.intervals) - 1)
        return self.column("k_blocks")[idx] * self.block_power

    def realized_mean_sq_mismatch(self, include_flagged=False):
        """Length-weighted mean of the realized squared mismatch in kW**2."""
        use = [iv for iv in self.intervals if include_flagged or not iv.flagged]
        if not use:
            return 0.0
        lengths = np.array([iv.length for iv in use])
        values = np.array([iv.realized_sq_mismatch for iv in use])
        return float(lengths @ values / lengths.sum())


def plan_horizon(problem, path, *, integer_blocks=False):
    """Run the adaptive sub-interval planner along a realized generation path.

    At each interval start the most recent path value at or before that time
    is observed (no look-ahead). The interval length and block count follow
    from :func:`interval_length` and :func:`optimal_blocks`; the loop stops
    once the intervals cover the horizon.

    With ``integer_blocks=True`` each block count is rounded up and the
    resulting increase of expected squared mismatch is recorded as
    ``rounding_penalty``.
    """
    horizon = problem.horizon
    if path.horizon < horizon * (1.0 - 1e-12):
        raise InvalidArgumentError(
            f"path covers [0, {path.horizon}] but the horizon is {horizon}"
        )
    times, values = path.times, path.values
    max_intervals = int(math.ceil(1.0 / _FLOOR_FRACTION)) + 2
    plan = ReservePlan(horizon=horizon, tolerance=problem.tolerance, block_power=problem.block_power)

    t = 0.0
    for _ in range(max_intervals):
        obs_idx = path.index_at(t)
        p_obs = float(values[obs_idx])
        dt = interval_length(problem, p_obs, t_start=t, remaining=horizon - t)
        k = optimal_blocks(problem, p_obs, dt, t_start=t)
        expected = expected_sq_mismatch(problem, p_obs, k, dt)
        flagged = expected > problem.tolerance * (1.0 + 1e-9)
        penalty = 0.0
        if integer_blocks:
            k_int = float(math.ceil(k - 1e-12))
            penalty = expected_sq_mismatch(problem, p_obs, k_int, dt) - expected
            k = k_int

        t_end = t + dt
        last = t_end >= horizon * (1.0 - 1e-12)
        if last:
            t_end = horizon
        inside = (times >= t - 1e-12) & (times < t_end - 1e-12)
        if not inside.any():
            inside = np.zeros_like(times, dtype=bool)
            inside[obs_idx] = True
        realized_gen = values[inside]
        mismatch = realized_gen + k * problem.block_power - problem.demand
        plan.intervals.append(
            ReserveInterval(
                t_start=t,
                t_end=t_end,
                k_blocks=k,
                p_obs=p_obs,
                expected_sq_mismatch=expected + penalty,
                realized_sq_mismatch=float(np.mean(mismatch**2)),
                realized_deficit=float(problem.demand - realized_gen.mean()),
                flagged=bool(flagged),
                rounding_penalty=penalty,
            )
        )
        if last:
            return plan
        t = t_end
    raise NumericalError("reserve plan did not cover the horizon")
