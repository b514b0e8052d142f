"""Command-line front end: run a scenario and write CSV traces plus a summary.

Exit codes: 0 success, 2 config/validation error, 3 infeasible problem,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import alloc, config, hedge, reserve
from .exceptions import InfeasibleDemandError, InvalidArgumentError, NumericalError
from .gbm import GbmParams, GbmPath, simulate_path, simulate_paths

log = logging.getLogger("microgrid_risk")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

HEDGE_COLUMNS = ("t", "p_g", "a", "b", "v", "payoff_if_now")
RESERVE_COLUMNS = ("t_start", "t_end", "k_blocks", "p_obs", "battery_power", "deficit")
ALLOC_COLUMNS = ("i", "mu", "sigma", "alpha")


@dataclass
class RunSummary:
    scheme: str
    inputs: dict
    metrics: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    runtime_s: float = 0.0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def _gbm(cfg):
    return GbmParams(**cfg.gbm)


def _run_allocate(cfg, out):
    means = np.asarray(cfg.means)
    if cfg.variances is not None:
        ensemble = alloc.ReguEnsemble.uncorrelated(cfg.variances, means, cfg.demand)
    else:
        ensemble = alloc.ReguEnsemble(means, np.asarray(cfg.covariance), cfg.demand)
    result = alloc.solve(ensemble)
    report = alloc.verify_kkt(ensemble, result, tol=1e-8)
    variances = np.diag(ensemble.covariance)
    rows = [(i, m, s, a) for i, (m, s, a) in enumerate(zip(means, variances, result.weights))]
    files = [_write_csv(out / "allocation.csv", ALLOC_COLUMNS, rows)]
    metrics = {
        "objective": result.objective,
        "kind": result.kind,
        "achieved_mean": result.achieved_mean,
        "gamma": result.gamma,
        "delta": result.delta,
        "weights": [float(w) for w in result.weights],
        "kkt_passed": report.passed,
    }
    return metrics, files


def _run_reserve(cfg, out):
    params = _gbm(cfg)
    problem = reserve.ReserveProblem.from_per_unit(
        params, cfg.demand, cfg.block_power, cfg.horizon, cfg.epsilon, cfg.base_power,
        literal=cfg.literal,
    )
    path = simulate_path(params, cfg.horizon, cfg.n_steps, cfg.seed)
    plan = reserve.plan_horizon(problem, path, integer_blocks=cfg.integer_blocks)
    base2 = cfg.base_power**2
    plan_rows = [
        (iv.t_start, iv.t_end, iv.k_blocks, iv.p_obs, iv.k_blocks * cfg.block_power, iv.realized_deficit)
        for iv in plan.intervals
    ]
    diag_rows = [
        (iv.t_start, iv.t_end, iv.expected_sq_mismatch / base2, iv.realized_sq_mismatch / base2, iv.flagged)
        for iv in plan.intervals
    ]
    battery = plan.battery_power(path.times)
    trace_rows = zip(path.times, path.values, cfg.demand - path.values, battery)
    files = [
        _write_csv(out / "reserve_plan.csv", RESERVE_COLUMNS, plan_rows),
        _write_csv(
            out / "reserve_diagnostics.csv",
            ("t_start", "t_end", "expected_sq_mismatch_pu", "realized_sq_mismatch_pu", "flagged"),
            diag_rows,
        ),
        _write_csv(out / "reserve_trace.csv", ("t", "p_g", "deficit", "battery_power"), trace_rows),
    ]
    ok = [iv.realized_sq_mismatch / base2 for iv in plan.intervals if not iv.flagged]
    metrics = {
        "n_intervals": len(plan.intervals),
        "n_flagged": plan.n_flagged,
        "total_covered": plan.total_covered,
        "mean_realized_sq_mismatch_pu": plan.realized_mean_sq_mismatch() / base2,
        "max_realized_sq_mismatch_pu": max(ok) if ok else None,
        "epsilon_pu": cfg.epsilon,
    }
    return metrics, files


def _hedge_problem(cfg, maturity=None):
    return hedge.HedgeProblem(_gbm(cfg), cfg.demand, cfg.block_power, maturity or cfg.horizon)


def _run_hedge(cfg, out):
    path = simulate_path(_gbm(cfg), cfg.horizon, cfg.n_steps, cfg.seed)
    maturities = cfg.maturities or [cfg.horizon]
    files, errors = [], {}
    for maturity in maturities:
        problem = _hedge_problem(cfg, maturity)
        trace = hedge.replay_hedge(problem, path, cfg.rebalance_every)
        name = "hedge_trace.csv" if cfg.maturities is None else f"hedge_trace_Tf{maturity:g}.csv"
        files.append(_write_csv(out / name, HEDGE_COLUMNS, trace.rows()))
        errors[f"{maturity:g}"] = {
            "terminal_error": trace.terminal_error,
            "p_g_final": float(trace.p_g[-1]),
            "v_final": float(trace.v[-1]),
            "b_final": float(trace.b[-1]),
            "v_initial": float(trace.v[0]),
            "a_initial": float(trace.a[0]),
            "b_initial": float(trace.b[0]),
        }
    metrics = errors[f"{maturities[0]:g}"] if cfg.maturities is None else {"by_maturity": errors}
    return metrics, files


def _run_montecarlo(cfg, out):
    problem = _hedge_problem(cfg)
    times, values = simulate_paths(_gbm(cfg), cfg.horizon, cfg.n_steps, cfg.n_paths, cfg.seed)
    _, p, _, _, v = hedge.replay_ensemble(problem, times, values, cfg.rebalance_every)
    payoff = np.maximum(cfg.demand - p[:, -1], 0.0)
    errors = np.abs(v[:, -1] - payoff)
    rows = ((i, p[i, -1], v[i, -1], payoff[i], errors[i]) for i in range(errors.size))
    first = GbmPath(times=times, values=values[0], seed=cfg.seed, stream=0)
    trace = hedge.replay_hedge(problem, first, cfg.rebalance_every)
    stats = hedge.ErrorSummary.from_errors(errors)
    files = [
        _write_csv(out / "hedge_errors.csv", ("path", "p_g_final", "v_final", "payoff", "error"), rows),
        _write_csv(out / "hedge_error_summary.csv", ("statistic", "value"), asdict(stats).items()),
        _write_csv(out / "hedge_trace_path0.csv", HEDGE_COLUMNS, trace.rows()),
    ]
    metrics = {"n_paths": int(errors.size), **asdict(stats)}
    return metrics, files


_RUNNERS = {
    "allocate": _run_allocate,
    "reserve": _run_reserve,
    "hedge": _run_hedge,
    "montecarlo-hedge": _run_montecarlo,
}


def run(cfg, output_dir=None):
    """Execute a validated scenario, write its artifacts and return a :class:`RunSummary`."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    metrics, files = _RUNNERS[cfg.scheme](cfg, out)
    echo = out / "config.yaml"
    echo.write_text(cfg.to_yaml())
    summary = RunSummary(
        scheme=cfg.scheme,
        inputs=cfg.values,
        metrics=metrics,
        outputs=[str(f) for f in [*files, echo]],
        runtime_s=time.perf_counter() - start,
    )
    (out / "summary.json").write_text(summary.to_json())
    return summary


def montecarlo_hedge(cfg, output_dir=None):
    if cfg.scheme != "montecarlo-hedge":
        cfg = cfg.with_overrides(scheme="montecarlo-hedge")
    return run(cfg, output_dir)


_VERB_SCHEME = {
    "allocate": "allocate",
    "plan-reserve": "reserve",
    "simulate-hedge": "hedge",
    "montecarlo-hedge": "montecarlo-hedge",
}


def _add_globals(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="scenario YAML file")
    parser.add_argument("--seed", type=int, default=default, help="override the scenario seed")
    parser.add_argument("--out", default=default, help="override the output directory")
    parser.add_argument("--format", choices=["csv"], default=argparse.SUPPRESS if suppress else "csv")
    parser.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="microgrid-risk",
        description="Renewable-uncertainty mitigation: allocation, battery reserve and hedging.",
    )
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, scheme in _VERB_SCHEME.items():
        p = sub.add_parser(verb, help=f"run a '{scheme}' scenario from --config")
        _add_globals(p, suppress=True)
    p = sub.add_parser("preset", help="run a bundled scenario preset")
    p.add_argument("name", nargs="?", help=f"one of: {', '.join(config.PRESETS)}")
    p.add_argument("--list", action="store_true", help="list preset names")
    _add_globals(p, suppress=True)
    return parser


def _load(args):
    if args.verb == "preset":
        if not args.name:
            raise config.ConfigError("preset name required")
        cfg = config.load_preset(args.name)
    else:
        if not args.config:
            raise config.ConfigError(f"'{args.verb}' requires --config")
        cfg = config.load(args.config)
        expected = _VERB_SCHEME[args.verb]
        if cfg.scheme != expected:
            raise config.ConfigError(
                f"'{args.verb}' expects scheme '{expected}', config has '{cfg.scheme}'",
                source=cfg.source,
                line=cfg.lines.get("scheme"),
            )
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.verb == "preset" and args.list:
        print("\n".join(config.PRESETS))
        return EXIT_OK
    try:
        cfg = _load(args)
        summary = run(cfg)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleDemandError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidArgumentError as exc:
        print(f"error: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("wrote %d files in %.3f s", len(summary.outputs), summary.runtime_s)
    print(json.dumps(summary.metrics, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
