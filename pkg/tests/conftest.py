"""Shared fixtures and the acceptance-criteria reporting hook.

Acceptance tests record their outcome in a registry before asserting, so
the end-of-run summary prints one visible pass/fail line per criterion even
when a criterion fails.
"""

import numpy as np
import pytest

import rdinverse as rd

# criterion number -> (label, passed, detail)
ACCEPTANCE = {}


def record_criterion(number: int, label: str, passed: bool, detail: str):
    ACCEPTANCE[number] = (label, bool(passed), detail)


@pytest.fixture
def acceptance():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        label, passed, detail = ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        tr.write_line(
            f"criterion {number:2d} [{verdict}] {label}: {detail}",
            green=passed,
            red=not passed,
        )


# ---------------------------------------------------------------------------
# shared problems
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def default_cfg():
    """The all-defaults Fisher configuration (101x51 grid, range 50 on [-1,1])."""
    return rd.config_from_dict({"reaction": "fisher"})


@pytest.fixture(scope="session")
def default_problem(default_cfg):
    return rd.build_problem(default_cfg)


@pytest.fixture(scope="session")
def fisher_truth(default_cfg):
    return rd.builtin_reaction("fisher", default_cfg.range_grid)


@pytest.fixture(scope="session")
def fisher_state(default_problem, fisher_truth):
    return rd.reference_solve(default_problem, fisher_truth)


@pytest.fixture(scope="session")
def small_cfg():
    """A coarse Fisher setup for fast unit tests of the iteration machinery."""
    return rd.config_from_dict(
        {
            "reaction": "fisher",
            "space": {"n_x": 41},
            "time": {"n_t": 21, "t_final": 0.1},
            "range": {"n_r": 30, "u_min": 0.0, "u_max": 1.0},
            "sobolev": {"s": 1.5},
        }
    )


@pytest.fixture(scope="session")
def small_problem(small_cfg):
    return rd.build_problem(small_cfg)


@pytest.fixture(scope="session")
def small_truth(small_cfg):
    return rd.builtin_reaction("fisher", small_cfg.range_grid)


@pytest.fixture(scope="session")
def small_state(small_problem, small_truth):
    return rd.reference_solve(small_problem, small_truth)


def interior_spacetime(problem, rng):
    """A random state-space direction: zero boundary columns, zero row 0."""
    vals = np.zeros((problem.time.n_t, problem.space.n_x))
    vals[:, 1:-1] = rng.standard_normal(vals[:, 1:-1].shape)
    return rd.SpaceTimeField(vals, problem.space, problem.time)
