"""Almost-sure provisioning of a critical demand at a future time.

A farm holds ``a`` renewable generation units and ``b`` battery blocks, worth
``V = a * P_g + b * P_b``. Rebalancing is self-financing (``da P_g + db P_b = 0``)
and ``a = dV/dP_g``, so ``V`` solves

    dV/dt + 0.5 * sigma_g**2 * P_g**2 * d2V/dP_g2 = 0,   V(P, T_f) = max(D_c - P, 0).

The solution is

    V(P, t) = D_c F(d_plus) - P F(d_minus),
    d_pm = (ln(D_c / P) +- sigma_g**2 tau / 2) / (sigma_g sqrt(tau)),  tau = T_f - t,

with ``F`` the standard normal CDF, giving ``a = -F(d_minus)`` and
``b = (D_c / P_b) F(d_plus)``. All closed forms accept numpy arrays and
broadcast over ``p_g`` and ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._validation import check_positive, check_positive_array
from .exceptions import InvalidArgumentError
from .gbm import GbmParams

# Below this time-to-maturity (hours) the policy uses the terminal step function.
TAU_MIN = 1e-9


def normal_cdf(x):
    """Standard normal CDF ``0.5 * erfc(-x / sqrt(2))``, accurate in both tails."""
    return ndtr(x)


@dataclass(frozen=True)
class HedgeProblem:
    """Critical demand ``D_c`` (kW) due at ``maturity`` hours, served from blocks of ``block_power`` kW."""

    gbm: GbmParams
    demand: float
    block_power: float
    maturity: float

    def __post_init__(self):
        object.__setattr__(self, "demand", check_positive("demand", self.demand))
        object.__setattr__(self, "block_power", check_positive("block_power", self.block_power))
        object.__setattr__(self, "maturity", check_positive("maturity", self.maturity))

    def with_maturity(self, maturity):
        return HedgeProblem(self.gbm, self.demand, self.block_power, maturity)


def _prepare(problem, p_g, t):
    p_g = check_positive_array("p_g", p_g)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or not np.all(np.isfinite(t)):
        raise InvalidArgumentError("t must be finite and >= 0")
    if np.any(t >= problem.maturity):
        raise InvalidArgumentError(
            "t must be before maturity; use terminal_payoff at t >= maturity"
        )
    return np.broadcast_arrays(p_g, problem.maturity - t)


def _d_terms(problem, p_g, tau):
    """``(d_plus, d_minus, terminal)``; ``terminal`` marks the step-function regime."""
    sigma = problem.gbm.sigma_g
    terminal = (tau < TAU_MIN) | (sigma == 0.0)
    safe_tau = np.where(terminal, 1.0, tau)
    vol = sigma * np.sqrt(safe_tau) if sigma > 0.0 else np.ones_like(safe_tau)
    log_ratio = np.log(problem.demand / p_g)
    # Subnormal sigma overflows d to +-inf, which the CDF maps correctly.
    with np.errstate(over="ignore", divide="ignore"):
        d_plus = (log_ratio + 0.5 * sigma**2 * safe_tau) / vol
    d_minus = d_plus - vol
    return d_plus, d_minus, terminal


def _unwrap(x):
    return float(x) if np.ndim(x) == 0 else x


def _holdings(problem, p_g, tau):
    d_plus, d_minus, terminal = _d_terms(problem, p_g, tau)
    short = p_g < problem.demand
    a = np.where(terminal, np.where(short, -1.0, 0.0), -normal_cdf(d_minus))
    b_frac = np.where(terminal, np.where(short, 1.0, 0.0), normal_cdf(d_plus))
    return a, b_frac * problem.demand / problem.block_power


def portfolio_value(problem, p_g, t):
    """Power held in the portfolio, ``D_c F(d_plus) - p_g F(d_minus)``, in kW.

    Bounded by ``[0, D_c]``. At zero volatility or within ``TAU_MIN`` of
    maturity it equals the payoff ``max(D_c - p_g, 0)``.
    """
    p_g, tau = _prepare(problem, p_g, t)
    d_plus, d_minus, terminal = _d_terms(problem, p_g, tau)
    value = problem.demand * normal_cdf(d_plus) - p_g * normal_cdf(d_minus)
    value = np.where(terminal, np.maximum(problem.demand - p_g, 0.0), value)
    return _unwrap(np.clip(value, 0.0, problem.demand))


def policy(problem, p_g, t):
    """Generation units ``a`` in ``[-1, 0]`` and battery blocks ``b`` in ``[0, D_c/P_b]``."""
    p_g, tau = _prepare(problem, p_g, t)
    a, b = _holdings(problem, p_g, tau)
    return _unwrap(a), _unwrap(b)


def terminal_payoff(problem, p_g_final):
    """Power owed at maturity: ``max(D_c - P_g(T_f), 0)``."""
    p = check_positive_array("p_g_final", p_g_final)
    return _unwrap(np.maximum(problem.demand - p, 0.0))


def noncritical_capacity(problem, p_g, t):
    """Non-critical load that can be served while the critical demand stays covered, ``(1 + |a|) p_g``."""
    a, _ = policy(problem, p_g, t)
    return _unwrap((1.0 + np.abs(a)) * np.asarray(p_g, dtype=float))


def _check_steps(problem, p_g, t, h_p, h_t):
    h_p = check_positive("h_p", h_p)
    h_t = check_positive("h_t", h_t)
    if np.any(np.asarray(p_g) - h_p <= 0.0):
        raise InvalidArgumentError("h_p must be smaller than p_g")
    t = np.asarray(t, dtype=float)
    if np.any(t - h_t < 0.0) or np.any(t + h_t >= problem.maturity):
        raise InvalidArgumentError("need h_t <= t < maturity - h_t")
    return h_p, h_t


def pde_residual(problem, p_g, t, h_p, h_t):
    """Central-difference value of ``dV/dt + 0.5 sigma**2 p**2 d2V/dp2`` (kW/hour)."""
    h_p, h_t = _check_steps(problem, p_g, t, h_p, h_t)
    p_g = np.asarray(p_g, dtype=float)
    t = np.asarray(t, dtype=float)
    v = portfolio_value(problem, p_g, t)
    dv_dt = (portfolio_value(problem, p_g, t + h_t) - portfolio_value(problem, p_g, t - h_t)) / (2 * h_t)
    d2v = (
        portfolio_value(problem, p_g + h_p, t) - 2 * v + portfolio_value(problem, p_g - h_p, t)
    ) / h_p**2
    return _unwrap(dv_dt + 0.5 * problem.gbm.sigma_g**2 * p_g**2 * d2v)


def finite_difference_delta(problem, p_g, t, h_p):
    """Central-difference ``dV/dp_g``; should match the generation holding ``a``."""
    h_p = check_positive("h_p", h_p)
    p_g = np.asarray(p_g, dtype=float)
    if np.any(p_g - h_p <= 0.0):
        raise InvalidArgumentError("h_p must be smaller than p_g")
    up = portfolio_value(problem, p_g + h_p, t)
    down = portfolio_value(problem, p_g - h_p, t)
    return _unwrap((np.asarray(up) - np.asarray(down)) / (2 * h_p))


@dataclass(frozen=True)
class HedgeTrace:
    """Holdings and portfolio power along one path, one row per grid point."""

    times: np.ndarray
    p_g: np.ndarray
    a: np.ndarray
    b: np.ndarray
    v: np.ndarray
    payoff_if_now: np.ndarray

    @property
    def terminal_error(self):
        return float(abs(self.v[-1] - self.payoff_if_now[-1]))

    def rows(self):
        return zip(self.times, self.p_g, self.a, self.b, self.v, self.payoff_if_now)


def _truncate_to_maturity(problem, times):
    times = np.asarray(times, dtype=float)
    n = int(np.searchsorted(times, problem.maturity * (1 + 1e-12), side="right"))
    if n < 2 or abs(times[n - 1] - problem.maturity) > 1e-9 * max(1.0, problem.maturity):
        raise InvalidArgumentError(
            f"path grid must contain the maturity {problem.maturity} (ends at {times[-1]})"
        )
    return n


def replay_ensemble(problem, times, values, rebalance_every=1):
    """Self-financing discrete replay of the policy on many paths at once.

    Between rebalance dates the holdings are frozen and the value moves by
    ``a * dP_g``. On a rebalance date ``a`` is reset from the policy and ``b``
    absorbs the difference at constant value. At maturity the holdings take
    their terminal step values.

    Returns ``(times, p_g, a, b, v)`` with arrays of shape ``(n_paths, n_points)``
    truncated at the maturity.
    """
    if int(rebalance_every) != rebalance_every or rebalance_every < 1:
        raise InvalidArgumentError("rebalance_every must be an integer >= 1")
    rebalance_every = int(rebalance_every)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n = _truncate_to_maturity(problem, times)
    times = np.asarray(times, dtype=float)[:n].copy()
    times[-1] = problem.maturity
    p = values[:, :n]
    check_positive_array("path values", p)

    a = np.empty_like(p)
    b = np.empty_like(p)
    v = np.empty_like(p)
    tau = problem.maturity - times
    v[:, 0] = portfolio_value(problem, p[:, 0], 0.0)
    a[:, 0], b[:, 0] = _holdings(problem, p[:, 0], np.full(p.shape[0], tau[0]))
    short = p[:, -1] < problem.demand
    for k in range(1, n):
        v[:, k] = v[:, k - 1] + a[:, k - 1] * (p[:, k] - p[:, k - 1])
        if k == n - 1:
            a[:, k] = np.where(short, -1.0, 0.0)
        elif k % rebalance_every == 0:
            a[:, k], _ = _holdings(problem, p[:, k], np.full(p.shape[0], tau[k]))
        else:
            a[:, k] = a[:, k - 1]
        b[:, k] = (v[:, k] - a[:, k] * p[:, k]) / problem.block_power
    return times, p, a, b, v


def replay_hedge(problem, path, rebalance_every=1):
    """Replay the policy along one :class:`~microgrid_risk.gbm.GbmPath`."""
    times, p, a, b, v = replay_ensemble(problem, path.times, path.values, rebalance_every)
    payoff = np.maximum(problem.demand - p[0], 0.0)
    return HedgeTrace(times=times, p_g=p[0], a=a[0], b=b[0], v=v[0], payoff_if_now=payoff)


def terminal_errors(problem, times, values, rebalance_every=1):
    """Absolute terminal hedging error of every path in an ensemble."""
    _, p, _, _, v = replay_ensemble(problem, times, values, rebalance_every)
    return np.abs(v[:, -1] - np.maximum(problem.demand - p[:, -1], 0.0))


@dataclass(frozen=True)
class ErrorSummary:
    mean: float
    rms: float
    max: float
    p99: float

    @classmethod
    def from_errors(cls, errors):
        errors = np.asarray(errors, dtype=float)
        return cls(
            mean=float(errors.mean()),
            rms=float(math.sqrt(np.mean(errors**2))),
            max=float(errors.max()),
            p99=float(np.percentile(errors, 99)),
        )
