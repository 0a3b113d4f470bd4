from __future__ import annotations

import importlib.util
import json
from pathlib import Path

import pytest

from coevo.domains import register_builtin_domains
from coevo.model import Constraint, Objective, ProblemSpec, load_rule_set
from coevo.sandbox import ExecutionLimits
from coevo.sourcecode import solution_from_source

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"

if importlib.util.find_spec("candidate_shim") is None:  # pragma: no cover
    raise RuntimeError(
        "the candidate-shim package is not installed; run "
        "'pip install -e ./shim --no-build-isolation' first"
    )


def pytest_configure(config):
    register_builtin_domains()


IDENTITY_SOLVER = '''
def solve(A_diag, b, x0, max_iter, tol):
    """Echo the starting point."""
    return {"x": list(x0), "trace": [[0, 0.0]]}
'''


@pytest.fixture
def identity_solution():
    return solution_from_source(IDENTITY_SOLVER, "solve")


@pytest.fixture
def quad_spec() -> ProblemSpec:
    return ProblemSpec(
        requirements=(
            "Minimize the average of n convex quadratic components over R^d "
            "within an iteration budget."
        ),
        objectives=(Objective("suboptimality", "minimize", 1.0),),
        constraints=(Constraint("c-loads", "candidate must load", "static-load"),),
        domain_id="quadratic",
    )


@pytest.fixture
def quad_rules():
    return load_rule_set(
        json.loads((REPO_ROOT / "configs" / "quadratic_rules.json").read_text())
    )


@pytest.fixture
def limits() -> ExecutionLimits:
    return ExecutionLimits(wall_time_limit=15.0)


@pytest.fixture
def fast_limits() -> ExecutionLimits:
    return ExecutionLimits(wall_time_limit=1.5)
