"""Experiment orchestration: config parsing, data generation, run artifacts.

Configs are JSON objects with a versioned ``schema`` field; unknown keys are
rejected with the dotted path of the offending field.  The full schema, with
defaults:

    {
      "schema": 1,
      "reaction": "fisher",              // truth law (see reactions)
      "initial_curve": "zero",           // "zero" or a builtin name
      "mode": "sequential",              // "standard" | "sequential"
      "observation": "full",             // "full" | "terminal"
      "noise": {"delta": 0.0, "seed": 0},
      "space": {"n_x": 101, "x_min": 0.0, "x_max": 1.0},
      "time": {"n_t": 51, "t_final": 0.1},
      "range": {"n_r": 50, "u_min": -1.0, "u_max": 1.0},
      "sobolev": {"s": 1.5},
      "coefficients": {"a": 1.0, "b": 0.0},
      "initial_state": {"profile": "sin_pi", "amplitude": 1.0},
      "source": {"profile": "zero", "amplitude": 0.0},
      "lower": {"rule": {"kind": "fixed_count", "k_max": 10},
                "step": {"safety": 0.9, "power_iterations": 12,
                          "max_backtracks": 30, "seed": 0,
                          "omega_override": null}},
      "upper": {"rule": {"kind": "fixed_count", "k_max": 100},
                "step": {...as above...}, "max_iterations": 100000},
      "output": {"directory": "runs/out", "snapshot_stride": 0,
                  "record_timing": false},
      "compare_standard": false
    }

Rule kinds: fixed_count{k_max}, residual_threshold{tol}, noise_coupled
{delta, q}, posterior{c_pos} for the lower level; fixed_count{k_max},
discrepancy{tau, delta} for the upper level.

A run writes run_log.csv, reaction_init.json, reaction_final.json,
reaction_truth.json, summary.json, and (with snapshot_stride > 0)
state_snapshots.csv holding the final-time profile of the accepted state
at every stride-th upper index.  With the same config and seeds the CSV
artifacts are byte-identical across runs.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, StructuralError
from .forward import PdeProblem, add_noise, observe, reference_solve
from .grids import SpaceGrid, SpaceTimeField, SpatialField, TimeGrid
from .lower import StepPolicy
from .reactions import (
    BUILTIN_REACTIONS,
    RangeGrid,
    ReactionCurve,
    SobolevSpec,
    builtin_reaction,
    curve_to_json,
    zero_curve,
)
from .stopping import (
    Discrepancy,
    FixedCount,
    NoiseCoupled,
    Posterior,
    ResidualThreshold,
    StoppingRule,
)
from .upper import InversionConfig, RunLog, run_inversion

SCHEMA_VERSION = 1

_U0_PROFILES = ("sin_pi", "sin_2pi", "zero")
_SOURCE_PROFILES = ("zero", "constant")
_LOWER_RULE_KINDS = ("fixed_count", "residual_threshold", "noise_coupled", "posterior")
_UPPER_RULE_KINDS = ("fixed_count", "discrepancy")


@dataclass(frozen=True)
class ExperimentConfig:
    reaction: str
    initial_curve: str
    mode: str
    observation: str
    noise_delta: float
    noise_seed: int
    space: SpaceGrid
    time: TimeGrid
    range_grid: RangeGrid
    sobolev: SobolevSpec
    a_value: float
    b_value: float
    u0_profile: str
    u0_amplitude: float
    source_profile: str
    source_amplitude: float
    lower_rule: StoppingRule
    lower_step: StepPolicy
    upper_rule: StoppingRule
    upper_step: StepPolicy
    max_upper_iterations: int
    out_dir: str
    snapshot_stride: int
    record_timing: bool
    compare_standard: bool


@dataclass
class RunSummary:
    """What a finished experiment reports, beyond the artifact files."""

    stop_reason: str
    j_stop: int
    sum_kappa: int
    final_misfit: float
    final_param_error: float
    final_state_error: float
    wall_ms: float
    config: dict
    artifacts: dict
    standard: Optional[dict] = None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if out["standard"] is None:
            del out["standard"]
        return out


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _reject_unknown(obj: dict, allowed, path: str):
    for key in obj:
        if key not in allowed:
            raise ConfigurationError("unknown key", field=_join(path, key))


def _section(data: dict, name: str) -> dict:
    sub = data.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigurationError("expected an object", field=name)
    return sub

def _scalar(sub: dict, key: str, default, path: str, kind=float):
    val = sub.get(key, default)
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigurationError("expected a number", field=_join(path, key))
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigurationError("expected an integer", field=_join(path, key))
        return val
    if kind is bool:
        if not isinstance(val, bool):
            raise ConfigurationError("expected a boolean", field=_join(path, key))
        return val
    if not isinstance(val, str):
        raise ConfigurationError("expected a string", field=_join(path, key))
    return val


def _enum(sub: dict, key: str, default: str, path: str, choices) -> str:
    val = _scalar(sub, key, default, path, kind=str)
    if val not in choices:
        raise ConfigurationError(
            f"must be one of {', '.join(choices)}", field=_join(path, key)
        )
    return val


def _parse_rule(sub: dict, path: str, kinds, default_kind: str, **default_args):
    _reject_unknown(sub, ("kind", "k_max", "tol", "delta", "q", "c_pos", "tau"), path)
    kind = _enum(sub, "kind", default_kind, path, kinds)
    try:
        if kind == "fixed_count":
            _reject_unknown(sub, ("kind", "k_max"), path)
            return FixedCount(_scalar(sub, "k_max", default_args.get("k_max", 10), path, int))
        if kind == "residual_threshold":
            _reject_unknown(sub, ("kind", "tol"), path)
            return ResidualThreshold(_scalar(sub, "tol", 1e-8, path))
        if kind == "noise_coupled":
            _reject_unknown(sub, ("kind", "delta", "q"), path)
            return NoiseCoupled(_scalar(sub, "delta", 0.0, path), _scalar(sub, "q", 2.0, path))
        if kind == "posterior":
            _reject_unknown(sub, ("kind", "c_pos"), path)
            return Posterior(_scalar(sub, "c_pos", 1.0, path))
        _reject_unknown(sub, ("kind", "tau", "delta"), path)
        return Discrepancy(_scalar(sub, "tau", 1.5, path), _scalar(sub, "delta", 0.0, path))
    except ConfigurationError as exc:
        if exc.field and exc.field.startswith("rule."):
            raise ConfigurationError(
                exc.message, field=f"{path}.{exc.field[len('rule.'):]}"
            ) from None
        raise


def _parse_step(sub: dict, path: str) -> StepPolicy:
    _reject_unknown(
        sub, ("safety", "power_iterations", "max_backtracks", "seed", "omega_override"), path
    )
    override = sub.get("omega_override", None)
    if override is not None and (not isinstance(override, (int, float)) or isinstance(override, bool)):
        raise ConfigurationError("expected a number or null", field=f"{path}.omega_override")
    policy = StepPolicy(
        safety=_scalar(sub, "safety", 0.9, path),
        power_iterations=_scalar(sub, "power_iterations", 12, path, int),
        max_backtracks=_scalar(sub, "max_backtracks", 30, path, int),
        seed=_scalar(sub, "seed", 0, path, int),
        omega_override=None if override is None else float(override),
    )
    if policy.safety <= 0 or policy.safety >= 2:
        # a gradient step is contractive up to omega*||op||^2 = 2; the
        # backtracking line guards the upper end of that window
        raise ConfigurationError("safety must lie in (0, 2)", field=f"{path}.safety")
    if policy.power_iterations < 1:
        raise ConfigurationError("power_iterations must be >= 1", field=f"{path}.power_iterations")
    if policy.max_backtracks < 0:
        raise ConfigurationError("max_backtracks must be >= 0", field=f"{path}.max_backtracks")
    return policy


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a config object and fill defaults; dotted-path errors."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object", field="")
    _reject_unknown(
        data,
        (
            "schema", "reaction", "initial_curve", "mode", "observation", "noise",
            "space", "time", "range", "sobolev", "coefficients", "initial_state",
            "source", "lower", "upper", "output", "compare_standard",
        ),
        "",
    )
    schema = _scalar(data, "schema", SCHEMA_VERSION, "", int)
    if schema != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema version {schema}", field="schema")

    reaction = _enum(data, "reaction", "fisher", "", BUILTIN_REACTIONS)
    initial_curve = _enum(
        data, "initial_curve", "zero", "", ("zero",) + tuple(BUILTIN_REACTIONS)
    )
    mode = _enum(data, "mode", "sequential", "", ("standard", "sequential"))
    observation = _enum(data, "observation", "full", "", ("full", "terminal"))

    noise = _section(data, "noise")
    _reject_unknown(noise, ("delta", "seed"), "noise")
    delta = _scalar(noise, "delta", 0.0, "noise")
    if delta < 0:
        raise ConfigurationError("delta must be nonnegative", field="noise.delta")
    noise_seed = _scalar(noise, "seed", 0, "noise", int)

    space_s = _section(data, "space")
    _reject_unknown(space_s, ("n_x", "x_min", "x_max"), "space")
    time_s = _section(data, "time")
    _reject_unknown(time_s, ("n_t", "t_final"), "time")
    range_s = _section(data, "range")
    _reject_unknown(range_s, ("n_r", "u_min", "u_max"), "range")
    try:
        space = SpaceGrid(
            _scalar(space_s, "n_x", 101, "space", int),
            _scalar(space_s, "x_min", 0.0, "space"),
            _scalar(space_s, "x_max", 1.0, "space"),
        )
    except StructuralError as exc:
        raise ConfigurationError(str(exc), field="space") from None
    try:
        time = TimeGrid(
            _scalar(time_s, "n_t", 51, "time", int),
            _scalar(time_s, "t_final", 0.1, "time"),
        )
    except StructuralError as exc:
        raise ConfigurationError(str(exc), field="time") from None
    try:
        range_grid = RangeGrid(
            _scalar(range_s, "n_r", 50, "range", int),
            _scalar(range_s, "u_min", -1.0, "range"),
            _scalar(range_s, "u_max", 1.0, "range"),
        )
    except StructuralError as exc:
        raise ConfigurationError(str(exc), field="range") from None

    sobolev_s = _section(data, "sobolev")
    _reject_unknown(sobolev_s, ("s",), "sobolev")
    s_val = _scalar(sobolev_s, "s", 1.5, "sobolev")
    if not s_val > 1:
        raise ConfigurationError("runs require s > 1", field="sobolev.s")
    sobolev = SobolevSpec(s_val)

    coeff = _section(data, "coefficients")
    _reject_unknown(coeff, ("a", "b"), "coefficients")
    a_value = _scalar(coeff, "a", 1.0, "coefficients")
    if a_value <= 0:
        raise ConfigurationError("a must be positive", field="coefficients.a")
    b_value = _scalar(coeff, "b", 0.0, "coefficients")

    init_s = _section(data, "initial_state")
    _reject_unknown(init_s, ("profile", "amplitude"), "initial_state")
    u0_profile = _enum(init_s, "profile", "sin_pi", "initial_state", _U0_PROFILES)
    u0_amplitude = _scalar(init_s, "amplitude", 1.0, "initial_state")

    source_s = _section(data, "source")
    _reject_unknown(source_s, ("profile", "amplitude"), "source")
    source_profile = _enum(source_s, "profile", "zero", "source", _SOURCE_PROFILES)
    source_amplitude = _scalar(source_s, "amplitude", 0.0, "source")

    lower_s = _section(data, "lower")
    _reject_unknown(lower_s, ("rule", "step"), "lower")
    lower_rule = _parse_rule(
        _section(lower_s, "rule"), "lower.rule", _LOWER_RULE_KINDS, "fixed_count", k_max=10
    )
    lower_step = _parse_step(_section(lower_s, "step"), "lower.step")

    upper_s = _section(data, "upper")
    _reject_unknown(upper_s, ("rule", "step", "max_iterations"), "upper")
    upper_rule = _parse_rule(
        _section(upper_s, "rule"), "upper.rule", _UPPER_RULE_KINDS, "fixed_count", k_max=100
    )
    upper_step = _parse_step(_section(upper_s, "step"), "upper.step")
    max_upper = _scalar(upper_s, "max_iterations", 100_000, "upper", int)
    if max_upper < 0:
        raise ConfigurationError("max_iterations must be >= 0", field="upper.max_iterations")

    output_s = _section(data, "output")
    _reject_unknown(output_s, ("directory", "snapshot_stride", "record_timing"), "output")
    out_dir = _scalar(output_s, "directory", "runs/out", "output", str)
    stride = _scalar(output_s, "snapshot_stride", 0, "output", int)
    if stride < 0:
        raise ConfigurationError("snapshot_stride must be >= 0", field="output.snapshot_stride")
    record_timing = _scalar(output_s, "record_timing", False, "output", bool)
    compare_standard = _scalar(data, "compare_standard", False, "", bool)

    return ExperimentConfig(
        reaction=reaction,
        initial_curve=initial_curve,
        mode=mode,
        observation=observation,
        noise_delta=delta,
        noise_seed=noise_seed,
        space=space,
        time=time,
        range_grid=range_grid,
        sobolev=sobolev,
        a_value=a_value,
        b_value=b_value,
        u0_profile=u0_profile,
        u0_amplitude=u0_amplitude,
        source_profile=source_profile,
        source_amplitude=source_amplitude,
        lower_rule=lower_rule,
        lower_step=lower_step,
        upper_rule=upper_rule,
        upper_step=upper_step,
        max_upper_iterations=max_upper,
        out_dir=out_dir,
        snapshot_stride=stride,
        record_timing=record_timing,
        compare_standard=compare_standard,
    )


def _rule_to_dict(rule: StoppingRule) -> dict:
    if isinstance(rule, FixedCount):
        return {"kind": "fixed_count", "k_max": rule.k_max}
    if isinstance(rule, ResidualThreshold):
        return {"kind": "residual_threshold", "tol": rule.tol}
    if isinstance(rule, NoiseCoupled):
        return {"kind": "noise_coupled", "delta": rule.delta, "q": rule.q}
    if isinstance(rule, Posterior):
        return {"kind": "posterior", "c_pos": rule.c_pos}
    return {"kind": "discrepancy", "tau": rule.tau, "delta": rule.delta}


def _step_to_dict(step: StepPolicy) -> dict:
    return {
        "safety": step.safety,
        "power_iterations": step.power_iterations,
        "max_backtracks": step.max_backtracks,
        "seed": step.seed,
        "omega_override": step.omega_override,
    }


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Serialize with every default made explicit (parse of the result is
    the identity)."""
    return {
        "schema": SCHEMA_VERSION,
        "reaction": cfg.reaction,
        "initial_curve": cfg.initial_curve,
        "mode": cfg.mode,
        "observation": cfg.observation,
        "noise": {"delta": cfg.noise_delta, "seed": cfg.noise_seed},
        "space": {"n_x": cfg.space.n_x, "x_min": cfg.space.x_min, "x_max": cfg.space.x_max},
        "time": {"n_t": cfg.time.n_t, "t_final": cfg.time.t_final},
        "range": {
            "n_r": cfg.range_grid.n_r,
            "u_min": cfg.range_grid.u_min,
            "u_max": cfg.range_grid.u_max,
        },
        "sobolev": {"s": cfg.sobolev.s},
        "coefficients": {"a": cfg.a_value, "b": cfg.b_value},
        "initial_state": {"profile": cfg.u0_profile, "amplitude": cfg.u0_amplitude},
        "source": {"profile": cfg.source_profile, "amplitude": cfg.source_amplitude},
        "lower": {"rule": _rule_to_dict(cfg.lower_rule), "step": _step_to_dict(cfg.lower_step)},
        "upper": {
            "rule": _rule_to_dict(cfg.upper_rule),
            "step": _step_to_dict(cfg.upper_step),
            "max_iterations": cfg.max_upper_iterations,
        },
        "output": {
            "directory": cfg.out_dir,
            "snapshot_stride": cfg.snapshot_stride,
            "record_timing": cfg.record_timing,
        },
        "compare_standard": cfg.compare_standard,
    }


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment config."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}", field="path") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc}", field="path") from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# problem assembly and the experiment driver
# ---------------------------------------------------------------------------


def _u0_values(cfg: ExperimentConfig) -> np.ndarray:
    xs = cfg.space.nodes
    span = cfg.space.x_max - cfg.space.x_min
    rel = (xs - cfg.space.x_min) / span
    if cfg.u0_profile == "sin_pi":
        vals = cfg.u0_amplitude * np.sin(np.pi * rel)
    elif cfg.u0_profile == "sin_2pi":
        vals = cfg.u0_amplitude * np.sin(2.0 * np.pi * rel)
    else:
        vals = np.zeros_like(xs)
    vals[0] = 0.0
    vals[-1] = 0.0  # the analytic profiles vanish there only up to round-off
    return vals


def build_problem(cfg: ExperimentConfig) -> PdeProblem:
    """Coefficient fields, initial state, and source from a parsed config."""
    nx, nt = cfg.space.n_x, cfg.time.n_t
    a = SpatialField(np.full(nx, cfg.a_value), cfg.space)
    b = SpatialField(np.full(nx, cfg.b_value), cfg.space)
    u0 = SpatialField(_u0_values(cfg), cfg.space)
    phi_vals = np.zeros((nt, nx))
    if cfg.source_profile == "constant":
        phi_vals[:, 1:-1] = cfg.source_amplitude
    phi = SpaceTimeField(phi_vals, cfg.space, cfg.time)
    return PdeProblem(a=a, b=b, phi=phi, u0=u0, space=cfg.space, time=cfg.time)


def _initial_curve(cfg: ExperimentConfig) -> ReactionCurve:
    if cfg.initial_curve == "zero":
        return zero_curve(cfg.range_grid)
    return builtin_reaction(cfg.initial_curve, cfg.range_grid)


def _write_curve(path: Path, curve: ReactionCurve):
    path.write_text(json.dumps(curve_to_json(curve), indent=2) + "\n")


def _write_log(path: Path, log: RunLog, record_timing: bool):
    log.to_csv(path, record_timing)


def _write_snapshots(path: Path, snapshots, xs):
    lines = ["j,x,u"]
    for j, profile in snapshots:
        for x, v in zip(xs, profile):
            lines.append(f"{j},{float(x)!r},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")


def run_experiment(cfg: ExperimentConfig) -> RunSummary:
    """Generate truth and data, run the inversion, write all artifacts.

    On divergence the last accepted curve and the log so far are still
    written before the error propagates.
    """
    t_start = _time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    problem = build_problem(cfg)
    truth = builtin_reaction(cfg.reaction, cfg.range_grid)
    u_truth = reference_solve(problem, truth)
    obs = add_noise(observe(u_truth, cfg.observation), cfg.noise_delta, cfg.noise_seed)
    init_curve = _initial_curve(cfg)

    inv = InversionConfig(
        mode=cfg.mode,
        observation_mode=cfg.observation,
        sobolev=cfg.sobolev,
        lower_rule=cfg.lower_rule,
        upper_rule=cfg.upper_rule,
        lower_step=cfg.lower_step,
        upper_step=cfg.upper_step,
        max_upper_iterations=cfg.max_upper_iterations,
        range_grid=cfg.range_grid,
    )

    snapshots = []
    stride = cfg.snapshot_stride

    def on_accept(j, curve, state):
        if stride > 0 and j % stride == 0:
            snapshots.append((j, state.u.values[-1].copy()))

    artifacts = {
        "run_log": str(out / "run_log.csv"),
        "reaction_init": str(out / "reaction_init.json"),
        "reaction_final": str(out / "reaction_final.json"),
        "reaction_truth": str(out / "reaction_truth.json"),
        "summary": str(out / "summary.json"),
    }
    _write_curve(out / "reaction_init.json", init_curve)
    _write_curve(out / "reaction_truth.json", truth)

    try:
        final_curve, log = run_inversion(
            problem, init_curve, obs, inv,
            truth_curve=truth, truth_state=u_truth, on_accept=on_accept,
        )
    except DivergenceError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            p_curve, p_log = partial
            _write_curve(out / "reaction_final.json", p_curve)
            _write_log(out / "run_log.csv", p_log, cfg.record_timing)
        raise

    _write_log(out / "run_log.csv", log, cfg.record_timing)
    _write_curve(out / "reaction_final.json", final_curve)
    if snapshots:
        artifacts["state_snapshots"] = str(out / "state_snapshots.csv")
        _write_snapshots(out / "state_snapshots.csv", snapshots, cfg.space.nodes)

    standard = None
    if cfg.compare_standard:
        inv_std = dataclasses.replace(
            inv, mode="standard", lower_step=dataclasses.replace(cfg.lower_step)
        )
        _, log_std = run_inversion(
            problem, init_curve, obs, inv_std,
            truth_curve=truth, truth_state=u_truth,
        )
        artifacts["run_log_standard"] = str(out / "run_log_standard.csv")
        _write_log(out / "run_log_standard.csv", log_std, cfg.record_timing)
        std_last = log_std.records[-1]
        standard = {
            "stop_reason": log_std.stop_reason,
            "j_stop": std_last.j,
            "sum_kappa": log_std.sum_kappa,
            "final_misfit": std_last.misfit,
        }

    last = log.records[-1]
    summary = RunSummary(
        stop_reason=log.stop_reason,
        j_stop=last.j,
        sum_kappa=log.sum_kappa,
        final_misfit=last.misfit,
        final_param_error=last.param_error,
        final_state_error=last.state_error,
        wall_ms=(_time.perf_counter() - t_start) * 1e3,
        config=config_to_dict(cfg),
        artifacts=artifacts,
        standard=standard,
    )
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# noise sweep
# ---------------------------------------------------------------------------

SWEEP_CSV_HEADER = "delta,j_stop,param_error,misfit"


def noise_sweep(cfg: ExperimentConfig, deltas, max_workers: int = 3) -> list:
    """Run the experiment once per noise level; write noise_sweep.csv.

    Each entry gets its own noise seed (base seed + index) and output
    subdirectory; a discrepancy upper rule has its delta retuned to the
    entry's noise level.  Entries run in a bounded thread pool and the rows
    come back in input order.
    """
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ConfigurationError("sweep needs at least one noise level", field="noise")
    for d in deltas:
        if d < 0 or not math.isfinite(d):
            raise ConfigurationError("noise levels must be finite and >= 0", field="noise")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def entry_config(i, d):
        rule = cfg.upper_rule
        if isinstance(rule, Discrepancy):
            rule = dataclasses.replace(rule, delta=d)
        return dataclasses.replace(
            cfg,
            noise_delta=d,
            noise_seed=cfg.noise_seed + i,
            upper_rule=rule,
            out_dir=str(out / f"delta_{i}"),
            compare_standard=False,
            snapshot_stride=0,
        )

    def run_entry(args):
        i, d = args
        summary = run_experiment(entry_config(i, d))
        return {
            "delta": d,
            "j_stop": summary.j_stop,
            "param_error": summary.final_param_error,
            "misfit": summary.final_misfit,
        }

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(deltas)))) as pool:
        rows = list(pool.map(run_entry, enumerate(deltas)))

    lines = [SWEEP_CSV_HEADER]
    for row in rows:
        lines.append(
            f"{row['delta']!r},{row['j_stop']},{row['param_error']!r},{row['misfit']!r}"
        )
    (out / "noise_sweep.csv").write_text("\n".join(lines) + "\n")
    return rows
