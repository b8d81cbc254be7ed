"""Config parsing, the experiment driver and its artifacts, the noise
sweep, and the command-line interface."""

import dataclasses
import json

import numpy as np
import pytest

import rdinverse as rd
from rdinverse import ConfigurationError
from rdinverse.cli import main as cli_main
from rdinverse.harness import config_from_dict, config_to_dict, noise_sweep, parse_config, run_experiment
from rdinverse.reactions import curve_from_json
from rdinverse.stopping import Discrepancy, FixedCount, NoiseCoupled, ResidualThreshold

RUN_LOG_HEADER = "j,kappa,lower_residual,misfit,param_error,state_error,wall_ms"

SMALL_RUN = {
    "reaction": "fisher",
    "observation": "full",
    "mode": "sequential",
    "space": {"n_x": 41},
    "time": {"n_t": 21, "t_final": 0.1},
    "range": {"n_r": 30, "u_min": 0.0, "u_max": 1.0},
    "lower": {"rule": {"kind": "fixed_count", "k_max": 5}, "step": {"safety": 1.9}},
    "upper": {"rule": {"kind": "fixed_count", "k_max": 6}, "step": {"safety": 1.9}},
}


def _small_cfg_dict(out_dir, **extra):
    data = json.loads(json.dumps(SMALL_RUN))
    data["output"] = {"directory": str(out_dir)}
    data.update(extra)
    return data


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_defaults_pin_the_reference_setup():
    cfg = config_from_dict({"reaction": "fisher"})
    assert cfg.space.n_x == 101 and cfg.space.x_min == 0.0 and cfg.space.x_max == 1.0
    assert cfg.time.n_t == 51 and cfg.time.t_final == 0.1
    assert cfg.range_grid.n_r == 50
    assert cfg.range_grid.u_min == -1.0 and cfg.range_grid.u_max == 1.0
    assert cfg.sobolev.s == 1.5
    assert cfg.a_value == 1.0 and cfg.b_value == 0.0
    assert cfg.mode == "sequential" and cfg.observation == "full"
    assert cfg.initial_curve == "zero"
    assert cfg.noise_delta == 0.0 and cfg.noise_seed == 0
    assert cfg.u0_profile == "sin_pi" and cfg.u0_amplitude == 1.0
    assert cfg.source_profile == "zero"
    assert cfg.lower_rule == FixedCount(10)
    assert cfg.upper_rule == FixedCount(100)
    assert cfg.lower_step.safety == 0.9
    assert cfg.snapshot_stride == 0
    assert cfg.record_timing is False
    assert cfg.compare_standard is False


def test_config_roundtrip():
    cfg = config_from_dict(
        {
            "reaction": "zfk",
            "initial_curve": "fisher",
            "mode": "standard",
            "observation": "terminal",
            "noise": {"delta": 0.02, "seed": 3},
            "range": {"n_r": 50, "u_min": 0.0, "u_max": 0.96},
            "sobolev": {"s": 1.01},
            "coefficients": {"a": 2.0, "b": -0.5},
            "initial_state": {"profile": "sin_2pi", "amplitude": 0.4},
            "source": {"profile": "constant", "amplitude": 8.0},
            "lower": {"rule": {"kind": "noise_coupled", "delta": 0.02, "q": 1.5}},
            "upper": {
                "rule": {"kind": "discrepancy", "tau": 1.5, "delta": 0.02},
                "max_iterations": 77,
            },
            "compare_standard": True,
        }
    )
    assert cfg.lower_rule == NoiseCoupled(0.02, 1.5)
    assert cfg.upper_rule == Discrepancy(1.5, 0.02)
    assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize(
    "data, field",
    [
        ({"bogus": 1}, "bogus"),
        ({"space": {"nx": 11}}, "space.nx"),
        ({"noise": {"delta": 0.1, "sd": 1}}, "noise.sd"),
        ({"lower": {"rule": {"kind": "fixed_count", "tol": 0.1}}}, "lower.rule.tol"),
        ({"upper": {"step": {"gain": 2.0}}}, "upper.step.gain"),
        ({"output": {"dir": "x"}}, "output.dir"),
    ],
)
def test_unknown_keys_rejected_with_dotted_paths(data, field):
    with pytest.raises(ConfigurationError) as err:
        config_from_dict(data)
    assert err.value.field == field


@pytest.mark.parametrize(
    "data, field",
    [
        ({"schema": 2}, "schema"),
        ({"reaction": "cubic"}, "reaction"),
        ({"initial_curve": "random"}, "initial_curve"),
        ({"mode": "diagonal"}, "mode"),
        ({"observation": "half"}, "observation"),
        ({"noise": {"delta": -0.1}}, "noise.delta"),
        ({"space": {"n_x": 2}}, "space"),
        ({"time": {"n_t": 1}}, "time"),
        ({"range": {"n_r": 1}}, "range"),
        ({"sobolev": {"s": 1.0}}, "sobolev.s"),
        ({"sobolev": {"s": 0.5}}, "sobolev.s"),
        ({"coefficients": {"a": 0.0}}, "coefficients.a"),
        ({"initial_state": {"profile": "bump"}}, "initial_state.profile"),
        ({"source": {"profile": "ramp"}}, "source.profile"),
        ({"lower": {"rule": {"kind": "discrepancy"}}}, "lower.rule.kind"),
        ({"upper": {"rule": {"kind": "posterior"}}}, "upper.rule.kind"),
        ({"lower": {"rule": {"kind": "fixed_count", "k_max": 0}}}, "lower.rule.k_max"),
        ({"lower": {"step": {"safety": 2.0}}}, "lower.step.safety"),
        ({"lower": {"step": {"safety": 0.0}}}, "lower.step.safety"),
        ({"upper": {"max_iterations": -1}}, "upper.max_iterations"),
        ({"output": {"snapshot_stride": -1}}, "output.snapshot_stride"),
        ({"time": {"n_t": 10.5}}, "time.n_t"),
        ({"compare_standard": "yes"}, "compare_standard"),
    ],
)
def test_invalid_values_rejected(data, field):
    with pytest.raises(ConfigurationError) as err:
        config_from_dict(data)
    assert err.value.field == field


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        parse_config(bad)


def test_build_problem_fields():
    cfg = config_from_dict(
        {
            "reaction": "fisher",
            "coefficients": {"a": 2.5, "b": -0.25},
            "initial_state": {"profile": "sin_pi", "amplitude": 0.8},
            "source": {"profile": "constant", "amplitude": 3.0},
        }
    )
    problem = rd.build_problem(cfg)
    assert np.all(problem.a.values == 2.5)
    assert np.all(problem.b.values == -0.25)
    assert problem.u0.values[0] == 0.0 and problem.u0.values[-1] == 0.0
    mid = cfg.space.n_x // 2
    assert problem.u0.values[mid] == pytest.approx(0.8, abs=1e-12)
    assert np.all(problem.phi.values[:, 1:-1] == 3.0)
    assert np.all(problem.phi.values[:, 0] == 0.0)
    assert np.all(problem.phi.values[:, -1] == 0.0)


# ---------------------------------------------------------------------------
# experiment driver and artifacts
# ---------------------------------------------------------------------------


def test_run_experiment_writes_all_artifacts(tmp_path):
    cfg = config_from_dict(_small_cfg_dict(tmp_path / "out"))
    summary = run_experiment(cfg)

    out = tmp_path / "out"
    log_lines = (out / "run_log.csv").read_text().splitlines()
    assert log_lines[0] == RUN_LOG_HEADER
    assert len(log_lines) == 2 + 6  # j = 0 plus six accepted upper steps
    first = log_lines[1].split(",")
    assert first[0] == "0"
    assert first[-1] == "0.0"  # timing is zeroed unless requested

    for name in ("reaction_init", "reaction_truth", "reaction_final"):
        curve = curve_from_json(json.loads((out / f"{name}.json").read_text()))
        assert curve.grid.n_r == 30
    init = curve_from_json(json.loads((out / "reaction_init.json").read_text()))
    assert np.all(init.samples == 0.0)

    meta = json.loads((out / "summary.json").read_text())
    assert meta["stop_reason"] == "upper_rule"
    assert meta["j_stop"] == 6
    assert meta["final_misfit"] == summary.final_misfit
    assert meta["config"]["reaction"] == "fisher"
    assert set(meta["artifacts"]) == {
        "run_log", "reaction_init", "reaction_final", "reaction_truth", "summary",
    }
    assert summary.sum_kappa == meta["sum_kappa"]


def test_run_experiment_is_deterministic(tmp_path):
    cfg_a = config_from_dict(_small_cfg_dict(tmp_path / "a", noise={"delta": 0.02, "seed": 5}))
    cfg_b = config_from_dict(_small_cfg_dict(tmp_path / "b", noise={"delta": 0.02, "seed": 5}))
    run_experiment(cfg_a)
    run_experiment(cfg_b)
    log_a = (tmp_path / "a" / "run_log.csv").read_bytes()
    log_b = (tmp_path / "b" / "run_log.csv").read_bytes()
    assert log_a == log_b
    final_a = (tmp_path / "a" / "reaction_final.json").read_bytes()
    final_b = (tmp_path / "b" / "reaction_final.json").read_bytes()
    assert final_a == final_b


def test_run_experiment_compare_standard(tmp_path):
    cfg = config_from_dict(_small_cfg_dict(tmp_path / "out", compare_standard=True))
    summary = run_experiment(cfg)
    std_lines = (tmp_path / "out" / "run_log_standard.csv").read_text().splitlines()
    assert std_lines[0] == RUN_LOG_HEADER
    assert summary.standard is not None
    assert summary.standard["sum_kappa"] >= summary.sum_kappa
    meta = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert "run_log_standard" in meta["artifacts"]


def test_run_experiment_snapshots(tmp_path):
    cfg = config_from_dict(_small_cfg_dict(tmp_path / "out", output={
        "directory": str(tmp_path / "out"), "snapshot_stride": 2,
    }))
    run_experiment(cfg)
    lines = (tmp_path / "out" / "state_snapshots.csv").read_text().splitlines()
    assert lines[0] == "j,x,u"
    seen = sorted({int(row.split(",")[0]) for row in lines[1:]})
    assert seen == [0, 2, 4, 6]
    # every cell parses as a plain number
    j, x, u = lines[1].split(",")
    float(x); float(u)
    rows_per_snapshot = cfg.space.n_x
    assert len(lines) - 1 == 4 * rows_per_snapshot


# ---------------------------------------------------------------------------
# noise sweep
# ---------------------------------------------------------------------------


def test_noise_sweep_rows_and_csv(tmp_path):
    data = _small_cfg_dict(tmp_path / "sweep")
    data["noise"] = {"delta": 0.0, "seed": 9}
    data["upper"] = {
        "rule": {"kind": "discrepancy", "tau": 1.5, "delta": 0.5},
        "step": {"safety": 1.9},
    }
    data["lower"] = {"rule": {"kind": "fixed_count", "k_max": 5}, "step": {"safety": 1.9}}
    cfg = config_from_dict(data)
    rows = noise_sweep(cfg, [0.04, 0.02], max_workers=2)
    assert [r["delta"] for r in rows] == [0.04, 0.02]

    lines = (tmp_path / "sweep" / "noise_sweep.csv").read_text().splitlines()
    assert lines[0] == "delta,j_stop,param_error,misfit"
    assert len(lines) == 3
    assert lines[1].startswith("0.04,")
    assert lines[2].startswith("0.02,")
    # per-entry artifacts land in their own subdirectories
    assert (tmp_path / "sweep" / "delta_0" / "run_log.csv").exists()
    assert (tmp_path / "sweep" / "delta_1" / "run_log.csv").exists()
    # each entry's discrepancy rule is retuned to its own noise level
    meta0 = json.loads((tmp_path / "sweep" / "delta_0" / "summary.json").read_text())
    assert meta0["config"]["upper"]["rule"]["delta"] == 0.04
    assert meta0["config"]["noise"]["seed"] == 9


def test_noise_sweep_validation(tmp_path):
    cfg = config_from_dict(_small_cfg_dict(tmp_path / "s2"))
    with pytest.raises(ConfigurationError):
        noise_sweep(cfg, [])
    with pytest.raises(ConfigurationError):
        noise_sweep(cfg, [-0.01])


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------


def _write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def test_cli_run_and_overrides(tmp_path, capsys):
    path = _write_cfg(tmp_path, _small_cfg_dict(tmp_path / "cli_out"))
    assert cli_main(["run", path]) == 0
    printed = capsys.readouterr().out
    assert "stop reason: upper_rule" in printed
    meta = json.loads((tmp_path / "cli_out" / "summary.json").read_text())
    assert meta["config"]["reaction"] == "fisher"

    out2 = tmp_path / "cli_out2"
    assert cli_main(["run", path, "--out", str(out2), "--reaction", "allen_cahn",
                     "--mode", "standard", "--data", "terminal", "--seed", "3"]) == 0
    meta2 = json.loads((out2 / "summary.json").read_text())
    assert meta2["config"]["reaction"] == "allen_cahn"
    assert meta2["config"]["mode"] == "standard"
    assert meta2["config"]["observation"] == "terminal"
    assert meta2["config"]["noise"]["seed"] == 3


def test_cli_diag_adjoint(tmp_path, capsys):
    path = _write_cfg(tmp_path, _small_cfg_dict(tmp_path / "d"))
    out = tmp_path / "diag_out"
    assert cli_main(["diag", "adjoint", path, "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["pass"] is True
    saved = json.loads((out / "diag_adjoint.json").read_text())
    assert saved == payload


def test_cli_diag_rate(tmp_path, capsys):
    path = _write_cfg(tmp_path, _small_cfg_dict(tmp_path / "r"))
    code = cli_main(["diag", "rate", path])
    payload = json.loads(capsys.readouterr().out)
    assert payload["name"] == "rate_fit"
    assert payload["window"] == [10, 200]
    assert (code == 0) == payload["pass"]


def test_cli_sweep(tmp_path, capsys):
    data = _small_cfg_dict(tmp_path / "cs")
    path = _write_cfg(tmp_path, data)
    assert cli_main(["sweep", "--noise", "0.04,0.02", path]) == 0
    lines = (tmp_path / "cs" / "noise_sweep.csv").read_text().splitlines()
    assert lines[0] == "delta,j_stop,param_error,misfit"
    assert len(lines) == 3


def test_cli_error_exit_codes(tmp_path, capsys):
    # configuration problems exit 2
    missing = str(tmp_path / "nope.json")
    assert cli_main(["run", missing]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"reaction": "fisher", "bogus": True}))
    assert cli_main(["run", str(bad)]) == 2
    good = _write_cfg(tmp_path, _small_cfg_dict(tmp_path / "e"))
    assert cli_main(["sweep", "--noise", "a,b", good]) == 2
    # argparse rejects unknown choices with exit code 2
    assert cli_main(["diag", "everything", good]) == 2
    capsys.readouterr()
