"""Experiment orchestration: benchmark runs, scenario simulation, result export.

Everything here is deterministic given (config, seed): random streams are
derived from (case, seed) ladders, reductions are fixed-order, and all
floating-point output goes through the 17-significant-digit formatter.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config import canonical_json, format_float, optimizer_settings
from .errors import InitializationError, StabilizabilityError, StepRejected
from .gains import StructuredGain
from .microgrid import (
    GridTopology,
    MgParams,
    STATES_PER_MG,
    assemble_network,
    build_blocks,
    build_case,
    initial_stabilizing_gain,
    riccati_baseline,
)
from .objective import ExactEvaluator, Problem
from .optimize import OptimizerConfig, RunRecord, gdmax, sgdmax
from .system import LtiSystem, NoiseModel, rollout

OUTPUT_DIR_ENV = "RISKLQR_OUT"


def topology_from_config(bench: Dict[str, Any]) -> GridTopology:
    edges = tuple((a - 1, b - 1) for a, b in bench["edges"])  # config is 1-indexed
    return GridTopology(bench["n_mg"], edges)


def params_from_config(bench: Dict[str, Any]) -> MgParams:
    p = bench["mg_params"]
    return MgParams(
        damping=p["damping"],
        droop=p["droop"],
        turbine_gain=p["turbine_gain"],
        turbine_time=p["turbine_time"],
        area_gain=p["area_gain"],
        area_time=p["area_time"],
        tie_coefficient=p["tie_coefficient"],
    )


def problem_for_case(cfg: Dict[str, Any], case: int) -> Problem:
    bench = cfg["benchmark"]
    return build_case(
        case,
        topology_from_config(bench),
        params_from_config(bench),
        np.diag(bench["qa_diag"]),
        np.array([[bench["ra"]]]),
        bench["load_std"],
        bench["risk_delta"],
        bench["dt"],
        bench["discretization"],
    )


def optimizer_config_for_case(cfg: Dict[str, Any], case: int) -> OptimizerConfig:
    s = optimizer_settings(cfg, case)
    return OptimizerConfig(
        eta=s["eta"],
        eps=s["eps"],
        cap=s["lambda_cap"],
        radius=s["smoothing_radius"],
        samples=s["samples"],
        iterations=s["iterations"],
        alpha=s["alpha"],
        mode=s["mode"],
        mc_horizon=s["mc_horizon"],
        mc_rollouts=s["mc_rollouts"],
        mc_burn_in=s["mc_burn_in"],
        max_halvings=s["max_halvings"],
    )


# ---------------------------------------------------------------------------
# scenario simulation


@dataclass(frozen=True)
class ScenarioSpec:
    """A step-load evaluation window.

    ``input_map`` maps per-microgrid load levels into the state update.
    ``step_time_s`` entries of None are drawn uniformly over the window from
    the rng passed to ``simulate_scenario``.
    """

    dt: float
    horizon_s: float
    input_map: np.ndarray                       # (n, N)
    step_time_s: Optional[List[float]] = None   # per microgrid, or None for random
    step_magnitude: Any = 0.0                   # scalar or per-microgrid list

    @property
    def n_mg(self) -> int:
        return self.input_map.shape[1]

    @property
    def steps(self) -> int:
        return int(round(self.horizon_s / self.dt))


@dataclass(frozen=True)
class ScenarioResult:
    """Per-microgrid frequency and tie-flow traces over the window."""

    times: np.ndarray        # (T,)
    delta_f: np.ndarray      # (T, N)
    delta_p_tie: np.ndarray  # (T, N)
    step_times_s: np.ndarray
    magnitudes: np.ndarray


def scenario_from_config(cfg: Dict[str, Any]) -> ScenarioSpec:
    bench = cfg["benchmark"]
    topo = topology_from_config(bench)
    _, bw_d = assemble_network(
        build_blocks(params_from_config(bench)), topo, bench["dt"], bench["discretization"]
    )
    sc = cfg["scenario"]
    return ScenarioSpec(
        dt=bench["dt"],
        horizon_s=sc["horizon_s"],
        input_map=bw_d,
        step_time_s=sc["step_time_s"],
        step_magnitude=sc["step_magnitude"],
    )


def simulate_scenario(
    sys: LtiSystem,
    K,
    spec: ScenarioSpec,
    rng: np.random.Generator,
) -> ScenarioResult:
    """Deterministic step-load rollout of the closed loop over the window."""
    n_mg = spec.n_mg
    if spec.step_time_s is None:
        times_s = rng.uniform(0.0, spec.horizon_s, size=n_mg)
    else:
        times_s = np.asarray(spec.step_time_s, dtype=float)
    mags = np.asarray(spec.step_magnitude, dtype=float)
    if mags.ndim == 0:
        mags = np.full(n_mg, float(mags))
    schedule = [
        (int(round(times_s[a] / spec.dt)), mags[a] * spec.input_map[:, a]) for a in range(n_mg)
    ]
    model = NoiseModel.step_load(sys.n, schedule)
    traj = rollout(sys, K, np.zeros(sys.n), spec.steps, model, rng)
    f_idx = [STATES_PER_MG * a for a in range(n_mg)]
    tie_idx = [STATES_PER_MG * a + 2 for a in range(n_mg)]
    return ScenarioResult(
        times=np.arange(spec.steps) * spec.dt,
        delta_f=traj.states[:, f_idx],
        delta_p_tie=traj.states[:, tie_idx],
        step_times_s=times_s,
        magnitudes=mags,
    )


# ---------------------------------------------------------------------------
# experiment runs


@dataclass
class CaseRun:
    case: int
    seed: int
    record: RunRecord
    scenario: ScenarioResult
    finals: Dict[str, Any]


@dataclass
class ResultBundle:
    config: Dict[str, Any]
    runs: List[CaseRun] = field(default_factory=list)
    baseline: Dict[str, Any] = field(default_factory=dict)
    errors: List[Dict[str, Any]] = field(default_factory=list)


def _final_metrics(problem: Problem, cap: float, record: RunRecord) -> Dict[str, Any]:
    evaluator = ExactEvaluator(problem, cap)
    phi, base, cons = evaluator.phi_parts(record.final_gain.values)
    return {
        "cost": float(base),
        "phi": float(phi),
        "constraint_values": [float(v) for v in cons],
        "constraint_bounds": [float(c.bound) for c in problem.constraints],
        "spectral_radius": float(problem.closed_loop_radius(record.final_gain)),
        "iterations": int(record.iterations_used),
        "converged": bool(record.converged),
        "best_phi_eval": float(record.best_phi) if record.best_gain is not None else None,
        "best_iteration": int(record.best_iteration),
    }


def run_experiment(cfg: Dict[str, Any]) -> ResultBundle:
    """Run every requested (case, seed) pair: build, initialize, optimize, simulate.

    Initialization and optimizer failures are reported per case/seed while
    the remaining runs proceed.
    """
    bundle = ResultBundle(config=cfg)
    scenario_spec = scenario_from_config(cfg)

    baseline_problem = problem_for_case(cfg, 3)
    dare_cost, dare_gain = riccati_baseline(baseline_problem)
    bundle.baseline = {
        "dare_cost": float(dare_cost),
        "gain_norm": float(np.linalg.norm(dare_gain.values)),
        "spectral_radius": float(baseline_problem.closed_loop_radius(dare_gain)),
    }

    for case in cfg["run"]["cases"]:
        try:
            problem = problem_for_case(cfg, case)
        except (StabilizabilityError, ValueError) as exc:
            bundle.errors.append({"case": case, "seed": None, "error": type(exc).__name__,
                                  "message": str(exc)})
            continue
        opt_cfg = optimizer_config_for_case(cfg, case)
        for seed in cfg["run"]["seeds"]:
            entropy = [int(case), int(seed)]
            try:
                init_rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(3,)))
                K0 = initial_stabilizing_gain(problem, cfg["run"]["init_scale"], init_rng)
                if opt_cfg.mode == "model-free":
                    record = sgdmax(problem, K0, opt_cfg, seed=entropy)
                else:
                    record = gdmax(problem, K0, opt_cfg)
                scen_rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(2,)))
                scenario = simulate_scenario(
                    problem.sys, record.final_gain, scenario_spec, scen_rng
                )
                finals = _final_metrics(problem, opt_cfg.cap, record)
                finals["optimality_gap"] = (
                    (finals["cost"] - dare_cost) / dare_cost if dare_cost > 0 else np.nan
                )
                bundle.runs.append(CaseRun(case, seed, record, scenario, finals))
            except (InitializationError, StepRejected, StabilizabilityError) as exc:
                bundle.errors.append({"case": case, "seed": seed, "error": type(exc).__name__,
                                      "message": str(exc)})
    return bundle


# ---------------------------------------------------------------------------
# export


def _write_text(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _iterates_csv(record: RunRecord, n_constraints: int) -> str:
    lam_cols = [f"lambda_{i + 1}" for i in range(n_constraints)]
    header = ",".join(["iteration", "cost", "phi", "grad_norm"] + lam_cols + ["spectral_radius"])
    lines = [header]
    for i in range(record.rows()):
        row = [str(int(record.iteration[i])),
               format_float(record.cost[i]),
               format_float(record.phi[i]),
               format_float(record.grad_norm[i])]
        row += [format_float(v) for v in record.multipliers[i]]
        row.append(format_float(record.spectral_radius[i]))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _scenario_csv(result: ScenarioResult, mg_index: int) -> str:
    lines = ["t,delta_f,delta_p_tie"]
    for i in range(result.times.size):
        lines.append(
            ",".join(
                [
                    format_float(result.times[i]),
                    format_float(result.delta_f[i, mg_index]),
                    format_float(result.delta_p_tie[i, mg_index]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def resolve_output_dir(cfg: Dict[str, Any], override: Optional[str] = None) -> str:
    """CLI flag beats the environment variable beats the config value."""
    if override:
        return override
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return env
    return cfg["run"]["output_dir"]


def export_results(bundle: ResultBundle, out_dir: str) -> List[str]:
    """Write per-run CSV/JSON files and the top-level summary; returns paths."""
    written = []
    table = []
    for run in bundle.runs:
        prefix = os.path.join(out_dir, f"case{run.case}", f"seed{run.seed}")
        n_constraints = run.record.multipliers.shape[1]
        written.append(
            _write_text(os.path.join(prefix, "iterates.csv"),
                        _iterates_csv(run.record, n_constraints))
        )
        for a in range(run.scenario.delta_f.shape[1]):
            written.append(
                _write_text(os.path.join(prefix, f"scenario_mg{a + 1}.csv"),
                            _scenario_csv(run.scenario, a))
            )
        run_summary = {
            "case": run.case,
            "seed": run.seed,
            "final": run.finals,
            "baseline": bundle.baseline,
            "scenario": {
                "step_times_s": [float(t) for t in run.scenario.step_times_s],
                "magnitudes": [float(m) for m in run.scenario.magnitudes],
            },
            "config": bundle.config,
        }
        written.append(
            _write_text(os.path.join(prefix, "summary.json"),
                        canonical_json(run_summary) + "\n")
        )
        table.append(
            {
                "case": run.case,
                "seed": run.seed,
                "final_cost": run.finals["cost"],
                "final_phi": run.finals["phi"],
                "constraint_values": run.finals["constraint_values"],
                "optimality_gap": run.finals["optimality_gap"],
                "iterations": run.finals["iterations"],
                "converged": run.finals["converged"],
            }
        )
    top = {
        "config": bundle.config,
        "baseline": bundle.baseline,
        "results": table,
        "errors": bundle.errors,
    }
    written.append(_write_text(os.path.join(out_dir, "summary.json"), canonical_json(top) + "\n"))
    return written
