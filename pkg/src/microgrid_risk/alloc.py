"""Minimum-variance allocation of demand over several renewable generation units.

Each unit ``i`` produces a Gaussian power ``e_i`` with mean ``mu_i``; the weights
``alpha`` solve

    minimize    0.5 * alpha' R alpha
    subject to  mu' alpha >= demand,  sum(alpha) = 1,  alpha >= 0.

With uncorrelated units (diagonal ``R``) the KKT system has a closed form:

* **EP** (excess production): the demand constraint is slack, ``gamma = 0`` and
  ``alpha_i`` is proportional to ``1 / var_i``.
* **CP** (critical production): the demand constraint is active and
  ``alpha_i = max(0, (gamma mu_i - delta) / var_i)`` with ``(gamma, delta)``
  fixed by ``sum(alpha) = 1`` and ``mu' alpha = demand`` (water-filling).

A general covariance is handled by an accelerated projected-gradient method
whose projection step is the same water-filling routine, followed by an exact
KKT solve on the detected support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_nonnegative, check_vector
from .exceptions import InfeasibleDemandError, InvalidArgumentError, NumericalError

EP = "EP"
CP = "CP"

_MAX_BISECT = 200
_RESIDUAL_TOL = 1e-10
_PSD_REGULARIZATION = 1e-12


@dataclass(frozen=True)
class ReguEnsemble:
    """Means, covariance and demand of an allocation problem (kW and kW**2)."""

    means: np.ndarray
    covariance: np.ndarray
    demand: float

    def __post_init__(self):
        means = check_vector("means", self.means)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (means.size, means.size):
            raise InvalidArgumentError(
                f"covariance shape {cov.shape} does not match {means.size} means"
            )
        if not np.all(np.isfinite(cov)):
            raise InvalidArgumentError("covariance must be finite")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
            raise InvalidArgumentError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov)[0] < -1e-10 * scale:
            raise InvalidArgumentError("covariance must be positive semidefinite")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "demand", check_nonnegative("demand", self.demand))

    @classmethod
    def uncorrelated(cls, variances, means, demand):
        return cls(np.asarray(means, float), np.diag(np.asarray(variances, float)), demand)

    @property
    def n(self):
        return self.means.size

    @property
    def is_diagonal(self):
        off = self.covariance - np.diag(np.diag(self.covariance))
        return not np.any(off)


@dataclass(frozen=True)
class Allocation:
    """Optimal weights with their KKT multipliers.

    ``gamma`` is the multiplier of the demand constraint (0 for EP) and
    ``delta`` the multiplier of ``sum(alpha) = 1``. The bound multipliers
    ``lambda`` follow from stationarity and are rebuilt by :func:`verify_kkt`.
    """

    weights: np.ndarray
    kind: str
    gamma: float
    delta: float
    achieved_mean: float
    objective: float

    @property
    def multipliers(self):
        if self.kind == EP:
            return (self.delta,)
        return (self.gamma, self.delta)


def _fill_delta(z, s):
    """Exact ``delta`` with ``sum(max(0, (z - delta) / s)) == 1``.

    The left side is piecewise linear and decreasing in ``delta`` with
    breakpoints at ``z``; the active set is the top-k entries of ``z``.
    """
    order = np.argsort(-z, kind="stable")
    zs = z[order]
    inv = 1.0 / s[order]
    cum_inv = np.cumsum(inv)
    cum_z = np.cumsum(zs * inv)
    deltas = (cum_z - 1.0) / cum_inv
    # Top-k is consistent when delta_k < z_(k) and delta_k >= z_(k+1).
    nxt = np.append(zs[1:], -np.inf)
    ok = (deltas < zs) & (deltas >= nxt)
    k = int(np.argmax(ok)) if ok.any() else z.size - 1
    return float(deltas[k])


def _weights(c, s, mu, gamma):
    z = c + gamma * mu
    delta = _fill_delta(z, s)
    return np.maximum(0.0, (z - delta) / s), delta


def _polish_active(c, s, mu, demand, alpha):
    """Solve the two linear KKT rows exactly on the support of ``alpha``."""
    active = alpha > 0.0
    if not active.any():
        return None
    ia = 1.0 / s[active]
    ma, ca = mu[active], c[active]
    mat = np.array([[np.sum(ma * ia), -np.sum(ia)], [np.sum(ma * ma * ia), -np.sum(ma * ia)]])
    rhs = np.array([1.0 - np.sum(ca * ia), demand - np.sum(ma * ca * ia)])
    if abs(np.linalg.det(mat)) < 1e-14 * max(1.0, np.abs(mat).max()) ** 2:
        return None
    gamma, delta = np.linalg.solve(mat, rhs)
    z = c + gamma * mu
    new = np.where(active, (z - delta) / s, 0.0)
    scale = max(1.0, np.abs(z).max())
    if gamma < 0.0 or np.any(new[active] < -1e-13) or np.any(z[~active] - delta > 1e-12 * scale):
        return None
    new = np.maximum(new, 0.0)
    return new, float(gamma), float(delta)


def _water_fill(c, s, mu, demand):
    """Weights ``max(0, (c + gamma mu - delta) / s)`` meeting ``mu' alpha >= demand``.

    Returns ``(alpha, gamma, delta)``. ``gamma >= 0`` is found by bisection on
    the achieved mean, which is nondecreasing in ``gamma``; ``delta`` is exact
    for every trial ``gamma``.
    """
    alpha, delta = _weights(c, s, mu, 0.0)
    if mu @ alpha >= demand:
        return alpha, 0.0, delta

    tol = _RESIDUAL_TOL * max(1.0, abs(demand))
    lo, hi = 0.0, 1.0
    for _ in range(_MAX_BISECT):
        alpha, delta = _weights(c, s, mu, hi)
        if mu @ alpha >= demand:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError("could not bracket the demand multiplier")

    for _ in range(_MAX_BISECT):
        alpha, delta = _weights(c, s, mu, hi)
        if mu @ alpha - demand <= tol or hi - lo <= 1e-15 * hi:
            break
        mid = 0.5 * (lo + hi)
        trial, _ = _weights(c, s, mu, mid)
        if mu @ trial >= demand:
            hi = mid
        else:
            lo = mid
    else:
        raise NumericalError("demand multiplier bisection did not converge")

    polished = _polish_active(c, s, mu, demand, alpha)
    if polished is not None:
        return polished
    return alpha, hi, delta


def _check_feasible(means, demand):
    if demand > means.max():
        raise InfeasibleDemandError(
            f"demand {demand} exceeds the largest achievable mean {means.max()}"
        )


def solve_uncorrelated(variances, means, demand):
    """Closed-form EP/CP allocation for uncorrelated units.

    Parameters
    ----------
    variances : array_like
        Per-unit variances (kW**2), all strictly positive.
    means : array_like
        Per-unit mean powers (kW).
    demand : float
        Demand that the mean combined power must reach (kW).

    Returns
    -------
    Allocation

    Raises
    ------
    InvalidArgumentError
        If a variance is not strictly positive or shapes disagree.
    InfeasibleDemandError
        If ``demand > max(means)``.
    """
    s = check_vector("variances", variances, positive=True)
    mu = check_vector("means", means)
    if s.shape != mu.shape:
        raise InvalidArgumentError("variances and means must have the same length")
    demand = check_nonnegative("demand", demand)
    _check_feasible(mu, demand)

    inv = 1.0 / s
    alpha = inv / inv.sum()
    mean = float(mu @ alpha)
    if mean > demand:
        return Allocation(alpha, EP, 0.0, float(-1.0 / inv.sum()), mean, 0.5 * float(s @ alpha**2))

    alpha, gamma, delta = _water_fill(np.zeros_like(mu), s, mu, demand)
    return Allocation(alpha, CP, float(gamma), float(delta), float(mu @ alpha), 0.5 * float(s @ alpha**2))


def project_feasible(y, means, demand):
    """Euclidean projection of ``y`` onto ``{alpha >= 0, sum = 1, means' alpha >= demand}``."""
    y = np.asarray(y, dtype=float)
    alpha, _, _ = _water_fill(y, np.ones_like(y), means, demand)
    return alpha


def _kkt_candidate(cov, mu, demand, support, with_demand):
    idx = np.flatnonzero(support)
    k = idx.size
    size = k + (2 if with_demand else 1)
    mat = np.zeros((size, size))
    rhs = np.zeros(size)
    mat[:k, :k] = cov[np.ix_(idx, idx)]
    mat[:k, k] = 1.0
    mat[k, :k] = 1.0
    rhs[k] = 1.0
    if with_demand:
        mat[:k, k + 1] = -mu[idx]
        mat[k + 1, :k] = mu[idx]
        rhs[k + 1] = demand
    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    if np.abs(mat @ sol - rhs).max() > 1e-9 * max(1.0, np.abs(rhs).max()):
        return None
    alpha = np.zeros(mu.size)
    alpha[idx] = sol[:k]
    delta = float(sol[k])
    gamma = float(sol[k + 1]) if with_demand else 0.0
    if np.any(alpha < -1e-12) or gamma < -1e-12:
        return None
    alpha = np.maximum(alpha, 0.0)
    lam = cov @ alpha + delta - gamma * mu
    scale = max(1.0, np.abs(cov).max())
    if np.any(lam[~support] < -1e-9 * scale):
        return None
    if not with_demand and mu @ alpha <= demand:
        return None
    return alpha, max(gamma, 0.0), delta


def _lsq_multipliers(cov, mu, alpha, with_demand):
    support = alpha > 1e-12
    grad = cov @ alpha
    if with_demand:
        mat = np.column_stack([np.ones(support.sum()), -mu[support]])
        sol, *_ = np.linalg.lstsq(mat, -grad[support], rcond=None)
        return max(float(sol[1]), 0.0), float(sol[0])
    return 0.0, float(-np.mean(grad[support]))


def solve_correlated(ensemble, *, max_iter=50000, tol=1e-14):
    """Minimum-variance allocation for an arbitrary PSD covariance.

    Runs accelerated projected gradient descent (FISTA) over the feasible
    polytope, then solves the equality-constrained KKT system on the support
    of the iterate to remove the residual iteration error. A diagonal
    regularization of 1e-12 keeps zero-variance units tractable.
    """
    mu = ensemble.means
    demand = ensemble.demand
    _check_feasible(mu, demand)
    cov = ensemble.covariance
    reg = cov + _PSD_REGULARIZATION * np.eye(mu.size)
    lipschitz = max(float(np.linalg.eigvalsh(reg)[-1]), _PSD_REGULARIZATION)

    def objective(a):
        return 0.5 * float(a @ cov @ a)

    x = project_feasible(np.full(mu.size, 1.0 / mu.size), mu, demand)
    y, t = x.copy(), 1.0
    converged = False
    for _ in range(max_iter):
        x_new = project_feasible(y - (reg @ y) / lipschitz, mu, demand)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        step = np.abs(x_new - x).max()
        x, t = x_new, t_new
        if step <= tol:
            converged = True
            break

    best = None
    for thr in (1e-10, 1e-8, 1e-6, 1e-4):
        support = x > thr
        if not support.any():
            continue
        for with_demand in (False, True):
            cand = _kkt_candidate(reg, mu, demand, support, with_demand)
            if cand is None:
                continue
            kind = CP if with_demand else EP
            if best is None or objective(cand[0]) < objective(best[0][0]) - 1e-15:
                best = (cand, kind)
    if best is not None and objective(best[0][0]) <= objective(x) + 1e-12:
        (alpha, gamma, delta), kind = best
        alpha = alpha / alpha.sum()
    else:
        if not converged:
            raise NumericalError("projected gradient did not converge")
        alpha = x
        kind = EP if mu @ alpha > demand + 1e-8 else CP
        gamma, delta = _lsq_multipliers(reg, mu, alpha, kind == CP)

    mean = float(mu @ alpha)
    if kind == EP and not mean > demand:
        kind = CP
    return Allocation(alpha, kind, float(gamma), float(delta), mean, objective(alpha))


def solve(ensemble):
    """Dispatch to the closed form when the covariance is diagonal and positive."""
    diag = np.diag(ensemble.covariance)
    if ensemble.is_diagonal and np.all(diag > 0.0):
        return solve_uncorrelated(diag, ensemble.means, ensemble.demand)
    return solve_correlated(ensemble)


@dataclass
class KktReport:
    """Pass/fail status of each KKT condition plus the worst residuals."""

    conditions: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    slack: np.ndarray | None = None

    @property
    def passed(self):
        return all(self.conditions.values())

    def failed(self):
        return [name for name, ok in self.conditions.items() if not ok]

    def __str__(self):
        lines = [
            f"{name:<22} {'pass' if ok else 'FAIL'}  residual={self.residuals[name]:.3e}"
            for name, ok in self.conditions.items()
        ]
        return "\n".join(lines)


def verify_kkt(ensemble, alloc, tol=1e-8):
    """Check the KKT conditions of an allocation against its stored multipliers.

    The bound multipliers are rebuilt as ``lambda = R alpha + delta - gamma mu``.
    ``stationarity`` requires ``lambda_i = 0`` wherever ``alpha_i > tol``.
    """
    cov, mu, demand = ensemble.covariance, ensemble.means, ensemble.demand
    alpha = np.asarray(alloc.weights, dtype=float)
    if alpha.shape != mu.shape:
        raise InvalidArgumentError("allocation does not match the ensemble size")
    gamma, delta = float(alloc.gamma), float(alloc.delta)
    lam = cov @ alpha + delta - gamma * mu
    mean = float(mu @ alpha)
    support = alpha > tol

    residuals = {
        "simplex": abs(alpha.sum() - 1.0),
        "nonnegative_weights": max(0.0, -alpha.min()),
        "demand_met": max(0.0, demand - mean),
        "gamma_nonnegative": max(0.0, -gamma),
        "stationarity": float(np.abs(lam[support]).max()) if support.any() else 0.0,
        "dual_feasible": max(0.0, -lam.min()),
        "complementary_bounds": float(np.abs(lam * alpha).max()),
        "complementary_demand": abs(gamma * (demand - mean)),
    }
    conditions = {name: value <= tol for name, value in residuals.items()}
    return KktReport(conditions=conditions, residuals=residuals, slack=lam)
