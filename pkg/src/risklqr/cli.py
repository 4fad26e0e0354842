"""Command-line interface: run, validate, baseline, constants."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from .config import canonical_json, load_config
from .errors import RiskLqrError
from .experiment import (
    export_results,
    optimizer_config_for_case,
    problem_for_case,
    resolve_output_dir,
    run_experiment,
)
from .microgrid import initial_stabilizing_gain, riccati_baseline
from .optimize import (
    estimate_local_constants,
    gdmax_step_rule,
    moreau_envelope,
    problem_phi_oracle,
    sgdmax_parameter_rule,
)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    bundle = run_experiment(cfg)
    out_dir = resolve_output_dir(cfg, args.out)
    written = export_results(bundle, out_dir)
    print(f"wrote {len(written)} files under {out_dir}")
    for run in bundle.runs:
        print(
            f"case {run.case} seed {run.seed}: final cost {run.finals['cost']:.6g}, "
            f"phi {run.finals['phi']:.6g}, gap {run.finals['optimality_gap']:.3%}"
        )
    for err in bundle.errors:
        print(f"case {err['case']} seed {err['seed']}: {err['error']}: {err['message']}")
    return 0 if not bundle.errors else 1


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(canonical_json(cfg))
    return 0


def _cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    problem = problem_for_case(cfg, 3)
    cost, gain = riccati_baseline(problem)
    print(
        canonical_json(
            {
                "dare_cost": cost,
                "gain_norm": float(np.linalg.norm(gain.values)),
                "spectral_radius": float(problem.closed_loop_radius(gain)),
            }
        )
    )
    return 0


def _cmd_constants(args) -> int:
    cfg = load_config(args.config)
    case = int(cfg["run"]["cases"][0])
    problem = problem_for_case(cfg, case)
    opt_cfg = optimizer_config_for_case(cfg, case)
    rng = np.random.default_rng(np.random.SeedSequence([case, 0], spawn_key=(3,)))
    K0 = initial_stabilizing_gain(problem, cfg["run"]["init_scale"], rng)
    oracle = problem_phi_oracle(problem, opt_cfg.cap)
    probe_rng = np.random.default_rng(np.random.SeedSequence([case, 0], spawn_key=(4,)))
    constants = estimate_local_constants(oracle, K0, args.radius, args.probes, probe_rng)
    envelope = moreau_envelope(oracle, K0, constants.mu0, lsmooth=constants.smoothness)
    radius, eta, iters = sgdmax_parameter_rule(
        constants, opt_cfg.eps, opt_cfg.samples, opt_cfg.alpha, envelope.value
    )
    print(
        canonical_json(
            {
                "case": case,
                "lipschitz": constants.lipschitz,
                "smoothness": constants.smoothness,
                "safe_radius": constants.safe_radius,
                "mu0": constants.mu0,
                "envelope_at_start": envelope.value,
                "suggested": {
                    "gdmax_eta": gdmax_step_rule(constants, opt_cfg.eps),
                    "sgdmax_radius": radius,
                    "sgdmax_eta": eta,
                    "sgdmax_iterations": iters,
                },
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risklqr",
        description="Risk-constrained structured-LQR learning and its microgrid benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment cases")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a config and echo it materialized")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_base = sub.add_parser("baseline", help="full-feedback Riccati baseline solve")
    p_base.add_argument("config")
    p_base.set_defaults(func=_cmd_baseline)

    p_const = sub.add_parser("constants", help="probe local constants at the initial gain")
    p_const.add_argument("config")
    p_const.add_argument("--radius", type=float, default=1.0, help="probe radius")
    p_const.add_argument("--probes", type=int, default=16, help="number of probe directions")
    p_const.set_defaults(func=_cmd_constants)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RiskLqrError as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
