"""Experiment configuration: schema, defaults, validation, canonical JSON.

The configuration is a JSON tree with four sections (benchmark, optimizer,
run, scenario). Validation rejects unknown keys, checks types and ranges,
and materializes every default into the returned tree, so the echoed config
is complete and reproducible. Floats are serialized with 17 significant
digits for byte-stable outputs.
"""

from __future__ import annotations

import json
import os
from typing import Any, Dict, List, Optional

from .errors import ConfigError

# Calibrated for the default benchmark scales (load_std 0.01); see README.
_RISK_DELTA_DEFAULT = 2.4e-15
_LAMBDA_CAP_DEFAULT = 2.0e10
_ETA_DEFAULT = 4.0e-3
_RADIUS_DEFAULT = 40.0

_OPTIMIZER_FIELDS: Dict[str, tuple] = {
    # name: (type tag, default, positivity requirement)
    "mode": ("mode", "model-free", None),
    "eta": ("float", _ETA_DEFAULT, "positive"),
    "eps": ("float", 1e-6, "positive"),
    "lambda_cap": ("float", _LAMBDA_CAP_DEFAULT, "positive"),
    "smoothing_radius": ("float", _RADIUS_DEFAULT, "positive"),
    "samples": ("int", 24, "positive"),
    "iterations": ("int", 150, "nonnegative"),
    "alpha": ("float", 40.0, "positive"),
    "mc_horizon": ("int", 2000, "positive"),
    "mc_rollouts": ("int", 2, "positive"),
    "mc_burn_in": ("opt_int", None, "nonnegative"),
    "max_halvings": ("int", 30, "nonnegative"),
}


def default_config() -> Dict[str, Any]:
    """The fully materialized default configuration tree."""
    return {
        "benchmark": {
            "n_mg": 6,
            "edges": [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6]],  # 1-indexed microgrids
            "mg_params": {
                "damping": 16.66,
                "droop": 1.2e-3,
                "turbine_gain": 1.0,
                "turbine_time": 0.3,
                "area_gain": 0.06,
                "area_time": 24.0,
                "tie_coefficient": 1090.0,
            },
            "qa_diag": [1000.0, 1.0, 1.0, 1.0],
            "ra": 1.0,
            "load_std": 0.01,
            "risk_delta": _RISK_DELTA_DEFAULT,
            "dt": 0.01,
            "discretization": "zoh",
        },
        "optimizer": {
            **{name: spec[1] for name, spec in _OPTIMIZER_FIELDS.items()},
            "case1": {},
            "case2": {},
            "case3": {},
        },
        "run": {
            "cases": [1, 2, 3],
            "seeds": [0, 1, 2, 3, 4],
            "output_dir": "results",
            "init_scale": 0.3,
        },
        "scenario": {
            "horizon_s": 20.0,
            "step_time_s": None,        # null: one random step time per microgrid
            "step_magnitude": 0.03,     # load step size (same units as load_std)
        },
    }


def _type_name(value: Any) -> str:
    return type(value).__name__


def _check_number(value: Any, path: str, integer: bool = False) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {_type_name(value)}", path)
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError("expected an integer", path)
        return int(value)
    return float(value)


def _check_sign(value, requirement: Optional[str], path: str):
    if requirement == "positive" and value is not None and value <= 0:
        raise ConfigError("must be positive", path)
    if requirement == "nonnegative" and value is not None and value < 0:
        raise ConfigError("must be nonnegative", path)


def _validate_optimizer_fields(raw: Dict[str, Any], base: Dict[str, Any], path: str) -> Dict[str, Any]:
    out = dict(base)
    for key, value in raw.items():
        if key not in _OPTIMIZER_FIELDS:
            raise ConfigError(f"unknown key {key!r}", path)
        tag, _, sign = _OPTIMIZER_FIELDS[key]
        p = f"{path}.{key}"
        if tag == "mode":
            if value not in ("model-based", "model-free"):
                raise ConfigError("mode must be 'model-based' or 'model-free'", p)
            out[key] = value
        elif tag == "float":
            out[key] = _check_number(value, p)
            _check_sign(out[key], sign, p)
        elif tag == "int":
            out[key] = _check_number(value, p, integer=True)
            _check_sign(out[key], sign, p)
        elif tag == "opt_int":
            out[key] = None if value is None else _check_number(value, p, integer=True)
            _check_sign(out[key], sign, p)
    return out


def validate_config(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Validate a raw config tree and materialize all defaults.

    Unknown keys anywhere in the tree are rejected.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    defaults = default_config()
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    cfg = defaults

    bench_raw = raw.get("benchmark", {})
    if not isinstance(bench_raw, dict):
        raise ConfigError("must be an object", "benchmark")
    bench = cfg["benchmark"]
    for key, value in bench_raw.items():
        path = f"benchmark.{key}"
        if key == "n_mg":
            bench[key] = _check_number(value, path, integer=True)
            if bench[key] < 1:
                raise ConfigError("need at least one microgrid", path)
        elif key == "edges":
            if not isinstance(value, list) or not all(
                isinstance(e, list) and len(e) == 2 for e in value
            ):
                raise ConfigError("edges must be a list of [a, b] pairs", path)
            bench[key] = [[_check_number(e[0], path, True), _check_number(e[1], path, True)]
                          for e in value]
        elif key == "mg_params":
            if not isinstance(value, dict):
                raise ConfigError("must be an object", path)
            params = dict(bench["mg_params"])
            for pk, pv in value.items():
                if pk not in params:
                    raise ConfigError(f"unknown key {pk!r}", path)
                params[pk] = _check_number(pv, f"{path}.{pk}")
                _check_sign(params[pk], "positive", f"{path}.{pk}")
            bench[key] = params
        elif key == "qa_diag":
            if not isinstance(value, list) or len(value) != 4:
                raise ConfigError("qa_diag must be a list of 4 numbers", path)
            bench[key] = [_check_number(v, path) for v in value]
            if any(v < 0 for v in bench[key]):
                raise ConfigError("weights must be nonnegative", path)
        elif key in ("ra", "load_std", "dt"):
            bench[key] = _check_number(value, path)
            _check_sign(bench[key], "positive", path)
        elif key == "risk_delta":
            bench[key] = _check_number(value, path)
        elif key == "discretization":
            if value not in ("zoh", "euler"):
                raise ConfigError("discretization must be 'zoh' or 'euler'", path)
            bench[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}", "benchmark")
    n_mg = bench["n_mg"]
    for a, b in bench["edges"]:
        if not (1 <= a <= n_mg and 1 <= b <= n_mg) or a == b:
            raise ConfigError(f"edge [{a}, {b}] out of range (microgrids are 1..{n_mg})",
                              "benchmark.edges")

    opt_raw = raw.get("optimizer", {})
    if not isinstance(opt_raw, dict):
        raise ConfigError("must be an object", "optimizer")
    case_overrides = {}
    base_raw = {}
    for key, value in opt_raw.items():
        if key in ("case1", "case2", "case3"):
            if not isinstance(value, dict):
                raise ConfigError("must be an object", f"optimizer.{key}")
            case_overrides[key] = value
        else:
            base_raw[key] = value
    base = _validate_optimizer_fields(
        base_raw, {name: spec[1] for name, spec in _OPTIMIZER_FIELDS.items()}, "optimizer"
    )
    cfg["optimizer"] = dict(base)
    for case_key in ("case1", "case2", "case3"):
        cfg["optimizer"][case_key] = _validate_optimizer_fields(
            case_overrides.get(case_key, {}), {}, f"optimizer.{case_key}"
        ) if case_overrides.get(case_key) else {}

    run_raw = raw.get("run", {})
    if not isinstance(run_raw, dict):
        raise ConfigError("must be an object", "run")
    run = cfg["run"]
    for key, value in run_raw.items():
        path = f"run.{key}"
        if key == "cases":
            if not isinstance(value, list) or not value:
                raise ConfigError("cases must be a nonempty list", path)
            run[key] = [_check_number(v, path, True) for v in value]
            if any(c not in (1, 2, 3) for c in run[key]):
                raise ConfigError("cases must be among 1, 2, 3", path)
        elif key == "seeds":
            if not isinstance(value, list) or not value:
                raise ConfigError("seeds must be a nonempty list", path)
            run[key] = [_check_number(v, path, True) for v in value]
            _check_sign(min(run[key]), "nonnegative", path)
        elif key == "output_dir":
            if not isinstance(value, str) or not value:
                raise ConfigError("output_dir must be a nonempty string", path)
            run[key] = value
        elif key == "init_scale":
            run[key] = _check_number(value, path)
            _check_sign(run[key], "positive", path)
        else:
            raise ConfigError(f"unknown key {key!r}", "run")

    sc_raw = raw.get("scenario", {})
    if not isinstance(sc_raw, dict):
        raise ConfigError("must be an object", "scenario")
    scenario = cfg["scenario"]
    for key, value in sc_raw.items():
        path = f"scenario.{key}"
        if key == "horizon_s":
            scenario[key] = _check_number(value, path)
            _check_sign(scenario[key], "positive", path)
        elif key == "step_time_s":
            if value is None:
                scenario[key] = None
            elif isinstance(value, list):
                scenario[key] = [_check_number(v, path) for v in value]
                _check_sign(min(scenario[key]), "nonnegative", path)
            else:
                raise ConfigError("step_time_s must be null or a list of seconds", path)
        elif key == "step_magnitude":
            if isinstance(value, list):
                scenario[key] = [_check_number(v, path) for v in value]
            else:
                scenario[key] = _check_number(value, path)
        else:
            raise ConfigError(f"unknown key {key!r}", "scenario")
    if isinstance(scenario["step_time_s"], list) and len(scenario["step_time_s"]) != n_mg:
        raise ConfigError(
            f"step_time_s needs one entry per microgrid ({n_mg})", "scenario.step_time_s"
        )
    if isinstance(scenario["step_magnitude"], list) and len(scenario["step_magnitude"]) != n_mg:
        raise ConfigError(
            f"step_magnitude needs one entry per microgrid ({n_mg})", "scenario.step_magnitude"
        )
    return cfg


def optimizer_settings(cfg: Dict[str, Any], case: int) -> Dict[str, Any]:
    """Base optimizer settings with the per-case override applied."""
    base = {name: cfg["optimizer"][name] for name in _OPTIMIZER_FIELDS}
    base.update(cfg["optimizer"].get(f"case{case}", {}))
    return base


def load_config(path: str) -> Dict[str, Any]:
    """Read a JSON config file and return the materialized tree."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return validate_config(raw)


def canonical_json(obj: Any, indent: int = 0) -> str:
    """Deterministic JSON with floats at 17 significant digits and LF endings."""
    pad = " " * indent
    inner = " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{inner}"{key}": {canonical_json(obj[key], indent + 2)}' for key in sorted(obj)
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = [f"{inner}{canonical_json(v, indent + 2)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def format_float(x: float) -> str:
    """17-significant-digit float formatting shared by CSV and JSON writers."""
    if x != x:
        return "NaN"
    if x == float("inf"):
        return "Infinity"
    if x == float("-inf"):
        return "-Infinity"
    return format(float(x), ".17g")
