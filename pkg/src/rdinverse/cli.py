"""Command-line entry point.

Subcommands
-----------
run <config>                 full experiment: data generation, inversion,
                             artifact files in the config's output directory
diag {adjoint|gradient|tcc|rate} <config>
                             one verification instrument; prints the JSON
                             report, exit 0 iff it passes
sweep --noise L1,L2,... <config>
                             one inversion per noise level, discrepancy
                             delta retuned per level; writes noise_sweep.csv

Common flags override the config: --out DIR, --seed N (noise seed),
--mode {standard|sequential}, --data {full|terminal}, --reaction NAME.

Exit codes: 0 success, 1 run/diagnostic failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .diagnostics import adjoint_test, fit_rate_slope, gradient_check, tcc_ratio
from .errors import ConfigurationError, DivergenceError, StagnationError
from .forward import add_noise, observe, reference_solve
from .grids import zeros_spacetime
from .harness import build_problem, noise_sweep, parse_config, run_experiment
from .lower import lower_run
from .reactions import BUILTIN_REACTIONS, builtin_reaction, zero_curve
from .stopping import FixedCount


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="noise seed (overrides the config)")
    common.add_argument("--mode", choices=("standard", "sequential"),
                        help="inversion mode (overrides the config)")
    common.add_argument("--data", choices=("full", "terminal"),
                        help="observation mode (overrides the config)")
    common.add_argument("--reaction", choices=BUILTIN_REACTIONS,
                        help="truth reaction law (overrides the config)")

    parser = argparse.ArgumentParser(
        prog="rdinverse",
        description="Identify nonlinear reaction laws in 1-D reaction-diffusion "
        "equations by bi-level Landweber iteration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="run one experiment")
    p_run.add_argument("config", help="JSON config file")

    p_diag = sub.add_parser("diag", parents=[common], help="run a verification instrument")
    p_diag.add_argument("which", choices=("adjoint", "gradient", "tcc", "rate"))
    p_diag.add_argument("config", help="JSON config file")

    p_sweep = sub.add_parser("sweep", parents=[common], help="noise-level sweep")
    p_sweep.add_argument("--noise", required=True,
                         help="comma-separated noise levels, e.g. 0.04,0.02,0.01")
    p_sweep.add_argument("config", help="JSON config file")
    return parser


def _apply_overrides(cfg, args):
    updates = {}
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.seed is not None:
        updates["noise_seed"] = args.seed
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.data is not None:
        updates["observation"] = args.data
    if args.reaction is not None:
        updates["reaction"] = args.reaction
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _initial_curve(cfg):
    if cfg.initial_curve == "zero":
        return zero_curve(cfg.range_grid)
    return builtin_reaction(cfg.initial_curve, cfg.range_grid)


def _diag_payload(cfg, which):
    problem = build_problem(cfg)
    truth = builtin_reaction(cfg.reaction, cfg.range_grid)
    seed = cfg.noise_seed
    if which == "adjoint":
        u = reference_solve(problem, truth)
        report = adjoint_test(problem, truth, u, trials=20, seed=seed)
        return report.to_dict(), report.passed
    if which == "gradient":
        u_truth = reference_solve(problem, truth)
        obs = add_noise(observe(u_truth, cfg.observation), cfg.noise_delta, seed)
        report = gradient_check(
            problem, _initial_curve(cfg), obs, seed=seed, sobolev=cfg.sobolev
        )
        return report.to_dict(), report.passed
    if which == "tcc":
        report = tcc_ratio(
            problem, truth, radius=0.1, samples=20, seed=seed,
            sobolev=cfg.sobolev, mode=cfg.observation,
        )
        return report.to_dict(), report.passed
    # rate: decay slope of a plain lower-level run from zero
    state = lower_run(
        problem, truth, zeros_spacetime(cfg.space, cfg.time),
        FixedCount(200), cfg.lower_step,
    )
    slope = fit_rate_slope(state.residual_history, 10, 200)
    passed = slope <= -0.25
    payload = {
        "name": "rate_fit",
        "window": [10, 200],
        "slope": slope,
        "threshold": -0.25,
        "pass": passed,
    }
    return payload, passed


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = _apply_overrides(parse_config(args.config), args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            summary = run_experiment(cfg)
            print(f"stop reason: {summary.stop_reason} (j={summary.j_stop}, "
                  f"sum kappa={summary.sum_kappa})")
            print(f"wrote {summary.artifacts['summary']}")
            return 0
        if args.command == "diag":
            payload, passed = _diag_payload(cfg, args.which)
            text = json.dumps(payload, indent=2)
            print(text)
            if args.out is not None:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / f"diag_{args.which}.json").write_text(text + "\n")
            return 0 if passed else 1
        # sweep
        try:
            deltas = [float(tok) for tok in args.noise.split(",") if tok.strip()]
        except ValueError:
            print(f"configuration error: --noise must be a comma-separated "
                  f"list of numbers, got {args.noise!r}", file=sys.stderr)
            return 2
        rows = noise_sweep(cfg, deltas)
        print(f"wrote {Path(cfg.out_dir) / 'noise_sweep.csv'} ({len(rows)} rows)")
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, StagnationError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
