"""Mitigating renewable-generation uncertainty in microgrids.

Three schemes are provided:

* :mod:`~microgrid_risk.alloc`: minimum-variance allocation over several units;
* :mod:`~microgrid_risk.reserve`: adaptive battery reserve under GBM generation;
* :mod:`~microgrid_risk.hedge`: almost-sure provisioning of a future critical demand.

:mod:`~microgrid_risk.gbm` holds the generation model shared by the last two.
"""

from .alloc import Allocation, ReguEnsemble, solve, solve_correlated, solve_uncorrelated, verify_kkt
from .exceptions import InfeasibleDemandError, InvalidArgumentError, NumericalError
from .gbm import GbmParams, GbmPath, mean_at, simulate_path, simulate_paths, variance_at
from .hedge import HedgeProblem, policy, portfolio_value, replay_hedge, terminal_payoff
from .reserve import ReservePlan, ReserveProblem, optimal_blocks, plan_horizon

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "GbmParams",
    "GbmPath",
    "HedgeProblem",
    "InfeasibleDemandError",
    "InvalidArgumentError",
    "NumericalError",
    "ReguEnsemble",
    "ReservePlan",
    "ReserveProblem",
    "mean_at",
    "optimal_blocks",
    "plan_horizon",
    "policy",
    "portfolio_value",
    "replay_hedge",
    "simulate_path",
    "simulate_paths",
    "solve",
    "solve_correlated",
    "solve_uncorrelated",
    "terminal_payoff",
    "variance_at",
    "verify_kkt",
]
