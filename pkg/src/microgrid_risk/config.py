"""YAML scenario configuration with line-anchored validation errors."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .exceptions import MicrogridRiskError

SCHEMES = ("allocate", "reserve", "hedge", "montecarlo-hedge")
PRESETS = ("fig2a", "fig2b", "fig3", "fig4", "fig5", "fig2-montecarlo")

_GBM_KEYS = ("p0", "mu_g", "sigma_g")

# key -> (type check, description)
_FIELDS = {
    "scheme": (str, "scheme name"),
    "description": (str, "free text"),
    "seed": (int, "non-negative integer"),
    "gbm": (dict, "mapping with p0, mu_g, sigma_g"),
    "demand": (float, "demand in kW"),
    "block_power": (float, "battery block power in kW"),
    "horizon": (float, "horizon or maturity in hours"),
    "maturities": (list, "list of maturities in hours"),
    "n_steps": (int, "number of path steps"),
    "rebalance_every": (int, "rebalance interval in path steps"),
    "epsilon": (float, "tolerance in per-unit**2"),
    "base_power": (float, "per-unit base power in kW"),
    "n_paths": (int, "number of Monte Carlo paths"),
    "output_dir": (str, "output directory"),
    "means": (list, "list of mean powers in kW"),
    "variances": (list, "list of variances in kW**2"),
    "covariance": (list, "covariance matrix in kW**2"),
    "literal": (bool, "use the literal printed block-count formula"),
    "integer_blocks": (bool, "round block counts up"),
}

_REQUIRED = {
    "allocate": ("means", "demand"),
    "reserve": ("gbm", "demand", "block_power", "horizon", "n_steps", "epsilon", "seed"),
    "hedge": ("gbm", "demand", "block_power", "horizon", "n_steps", "seed"),
    "montecarlo-hedge": ("gbm", "demand", "block_power", "horizon", "n_steps", "seed", "n_paths"),
}

_DEFAULTS = {
    "rebalance_every": 1,
    "base_power": 25.0,
    "output_dir": "out",
    "literal": False,
    "integer_blocks": False,
}


class ConfigError(MicrogridRiskError, ValueError):
    """Invalid or unreadable configuration; ``line`` is 1-based when known."""

    def __init__(self, message, *, source=None, line=None):
        self.source = source
        self.line = line
        where = source or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


def _key_lines(node, prefix=""):
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = f"{prefix}{key_node.value}"
            lines[key] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, key + "."))
    return lines


@dataclass
class ScenarioConfig:
    """One validated experiment description."""

    values: dict
    source: str | None = None
    lines: dict = field(default_factory=dict)

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in _FIELDS:
            return values.get(name)
        raise AttributeError(name)

    @property
    def scheme(self):
        return self.values["scheme"]

    def with_overrides(self, **overrides):
        values = copy.deepcopy(self.values)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return validate(values, source=self.source, lines=self.lines)

    def to_yaml(self):
        return yaml.safe_dump(self.values, sort_keys=True, default_flow_style=None)


def _fail(msg, key, source, lines):
    raise ConfigError(msg, source=source, line=lines.get(key))


def _coerce(key, value, source, lines):
    kind, desc = _FIELDS[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(f"'{key}' must be a number ({desc}), got {value!r}", key, source, lines)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(f"'{key}' must be an integer ({desc}), got {value!r}", key, source, lines)
        return int(value)
    if not isinstance(value, kind):
        _fail(f"'{key}' must be a {kind.__name__} ({desc}), got {value!r}", key, source, lines)
    return value


def _numbers(key, value, source, lines):
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        _fail(f"'{key}' must contain only numbers", key, source, lines)
    return [float(x) for x in value]


def validate(raw, *, source=None, lines=None):
    """Check a raw mapping against the scenario schema and fill defaults."""
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", source=source, line=1)
    for key in raw:
        if key not in _FIELDS:
            _fail(f"unknown key '{key}'", key, source, lines)
    values = {key: _coerce(key, value, source, lines) for key, value in raw.items()}

    scheme = values.get("scheme")
    if scheme not in SCHEMES:
        _fail(f"'scheme' must be one of {', '.join(SCHEMES)}, got {scheme!r}", "scheme", source, lines)
    for key in _REQUIRED[scheme]:
        if key not in values:
            raise ConfigError(f"scheme '{scheme}' requires '{key}'", source=source, line=lines.get("scheme"))
    for key, default in _DEFAULTS.items():
        values.setdefault(key, default)

    if "gbm" in values:
        gbm = values["gbm"]
        for key in gbm:
            if key not in _GBM_KEYS:
                _fail(f"unknown key 'gbm.{key}'", f"gbm.{key}", source, lines)
        for key in _GBM_KEYS:
            if key not in gbm:
                _fail(f"'gbm' requires '{key}'", "gbm", source, lines)
            v = gbm[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                _fail(f"'gbm.{key}' must be a number, got {v!r}", f"gbm.{key}", source, lines)
        values["gbm"] = {k: float(gbm[k]) for k in _GBM_KEYS}
        if values["gbm"]["p0"] <= 0:
            _fail("'gbm.p0' must be > 0", "gbm.p0", source, lines)
        if values["gbm"]["sigma_g"] < 0:
            _fail("'gbm.sigma_g' must be >= 0", "gbm.sigma_g", source, lines)

    for key in ("demand", "block_power", "horizon", "epsilon", "base_power"):
        if key in values:
            bad = values[key] < 0 if key == "demand" else values[key] <= 0
            if bad:
                _fail(f"'{key}' must be {'>= 0' if key == 'demand' else '> 0'}", key, source, lines)
    for key in ("n_steps", "rebalance_every", "n_paths"):
        if key in values and values[key] < 1:
            _fail(f"'{key}' must be >= 1", key, source, lines)
    if "seed" in values and values["seed"] < 0:
        _fail("'seed' must be >= 0", "seed", source, lines)

    if scheme == "allocate":
        values["means"] = _numbers("means", values["means"], source, lines)
        has_var, has_cov = "variances" in values, "covariance" in values
        if has_var == has_cov:
            _fail("allocate needs exactly one of 'variances' or 'covariance'", "scheme", source, lines)
        if has_var:
            values["variances"] = _numbers("variances", values["variances"], source, lines)
            if len(values["variances"]) != len(values["means"]):
                _fail("'variances' and 'means' differ in length", "variances", source, lines)
        else:
            rows = values["covariance"]
            if not all(isinstance(r, list) for r in rows):
                _fail("'covariance' must be a list of rows", "covariance", source, lines)
            values["covariance"] = [_numbers("covariance", r, source, lines) for r in rows]
            n = len(values["means"])
            if len(rows) != n or any(len(r) != n for r in rows):
                _fail(f"'covariance' must be {n}x{n}", "covariance", source, lines)

    if "maturities" in values:
        mats = _numbers("maturities", values["maturities"], source, lines)
        if not mats or any(m <= 0 or m > values["horizon"] * (1 + 1e-12) for m in mats):
            _fail("'maturities' must be positive and not exceed 'horizon'", "maturities", source, lines)
        values["maturities"] = mats

    return ScenarioConfig(values=values, source=source, lines=lines)


def loads(text, source=None):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", source=source, line=line) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}", source=source) from exc
    if raw is None:
        raise ConfigError("config is empty", source=source, line=1)
    return validate(raw, source=source, lines=_key_lines(node))


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from exc
    return loads(text, source=str(path))


def load_preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(PRESETS)}")
    text = resources.files("microgrid_risk").joinpath(f"presets/{name}.yaml").read_text()
    return loads(text, source=f"preset:{name}")
