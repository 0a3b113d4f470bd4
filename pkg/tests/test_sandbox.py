import math

import psutil
import pytest

from coevo.domains import get_domain
from coevo.model import check_report_invariants
from coevo.sandbox import (
    CompileFailure,
    ExecutionLimits,
    OutputOverflow,
    RuntimeFailure,
    ShimSession,
    Timeout,
    execute_candidate,
    validate,
)
from coevo.sourcecode import solution_from_source


def no_orphans() -> bool:
    return not psutil.Process().children(recursive=True)


def make_solution(body: str):
    return solution_from_source(body, "solve")


def broken_source_solution():
    """A solution whose unit text only fails when the shim compiles it."""
    from coevo.model import CodeSolution, FunctionUnit, UnitSignature

    unit = FunctionUnit(
        name="solve",
        signature=UnitSignature(params=(("x0", "any"),)),
        source="def solve(x0:\n    return x0",
    )
    return CodeSolution(units={"solve": unit}, deps=frozenset(), entrypoint="solve")


FULL_REQUEST = {
    "task": "solve_quad",
    "A_diag": [[1.0, 1.0]],
    "b": [[0.0, 0.0]],
    "x0": [1.0, 2.0],
    "max_iter": 1,
    "tol": 0.1,
}

HANG = "def solve(A_diag, b, x0, max_iter, tol):\n    while True:\n        pass"
RAISE = "def solve(A_diag, b, x0, max_iter, tol):\n    return 1 / 0"


class TestExecuteCandidate:
    def test_identity_solver_echoes(self, identity_solution, limits):
        response = execute_candidate(identity_solution, FULL_REQUEST, limits)
        assert response["x"] == [1.0, 2.0]
        assert no_orphans()

    def test_syntax_error_is_compile_failure(self, limits):
        with pytest.raises(CompileFailure) as exc_info:
            execute_candidate(broken_source_solution(), {"x0": [1]}, limits)
        assert "SyntaxError" in str(exc_info.value)
        assert no_orphans()

    def test_raising_candidate_is_runtime_failure(self, limits):
        with pytest.raises(RuntimeFailure) as exc_info:
            execute_candidate(make_solution(RAISE), {"task": "solve_quad", "A_diag": [], "b": [], "x0": [], "max_iter": 1, "tol": 0.1}, limits)
        assert "ZeroDivision" in exc_info.value.traceback_text
        assert no_orphans()

    def test_hanging_candidate_times_out(self, fast_limits):
        with pytest.raises(Timeout):
            execute_candidate(
                make_solution(HANG),
                {"task": "solve_quad", "A_diag": [], "b": [], "x0": [], "max_iter": 1, "tol": 0.1},
                fast_limits,
            )
        assert no_orphans()

    def test_oversized_response_is_output_overflow(self, limits):
        big = "def solve(A_diag, b, x0, max_iter, tol):\n    return {'x': [0.0] * 200000}"
        small_out = ExecutionLimits(wall_time_limit=10.0, max_stdout=10_000)
        with pytest.raises(OutputOverflow):
            execute_candidate(
                make_solution(big),
                {"task": "solve_quad", "A_diag": [], "b": [], "x0": [], "max_iter": 1, "tol": 0.1},
                small_out,
            )
        assert no_orphans()

    def test_limits_must_be_positive(self):
        with pytest.raises(ValueError):
            ExecutionLimits(wall_time_limit=0.0)


class TestSession:
    def test_one_process_per_session(self, identity_solution, limits):
        with ShimSession(limits) as session:
            children = psutil.Process().children(recursive=True)
            assert len(children) == 1
            session.load(identity_solution)
            session.call(FULL_REQUEST)
        assert no_orphans()

    def test_kill_after_hang_leaves_no_orphans(self, fast_limits):
        session = ShimSession(fast_limits)
        try:
            session.load(make_solution(HANG))
            with pytest.raises(Timeout):
                session.call({"A_diag": [], "b": [], "x0": [], "max_iter": 1, "tol": 0.1})
        finally:
            session.close()
        assert no_orphans()


GOOD_CANDIDATE = """
import numpy as np

def solve(A_diag, b, x0, max_iter, tol):
    a = np.asarray(A_diag, dtype=float)
    lin = np.asarray(b, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    step = 0.8 / float(a.mean(axis=0).max())
    trace = []
    for t in range(int(max_iter)):
        g = (a * x + lin).mean(axis=0)
        x = x - step * g
        f = float(np.mean(0.5 * (a * x * x).sum(axis=1) + lin.dot(x)))
        trace.append([t, f])
    return {"x": x.tolist(), "trace": trace}
"""

SLOW_ON_BIG_BUDGET = """
def solve(A_diag, b, x0, max_iter, tol):
    if int(max_iter) > 10:
        while True:
            pass
    return {"x": list(x0), "trace": [[0, 0.0]]}
"""


class TestValidate:
    def test_good_candidate_finite_fitness(self, quad_spec, quad_rules, limits):
        domain = get_domain("quadratic")
        report = validate(make_solution(GOOD_CANDIDATE), quad_rules, domain, limits, quad_spec)
        assert math.isfinite(report.fitness)
        assert "suboptimality" in report.metrics
        assert report.fitness == report.metrics["suboptimality"]
        check_report_invariants(report, quad_rules, quad_spec)
        assert no_orphans()

    def test_blocking_static_failure_gives_inf_fitness(self, quad_spec, quad_rules, limits):
        domain = get_domain("quadratic")
        report = validate(
            make_solution("def solve(x0):\n    return {'x': list(x0)}"),
            quad_rules,
            domain,
            limits,
            quad_spec,
        )
        # wrong signature: static-entrypoint blocks
        assert math.isinf(report.fitness)
        failed = dict.fromkeys(report.failed_rules())
        assert "static-entrypoint" in failed
        check_report_invariants(report, quad_rules, quad_spec)

    def test_per_rule_matches_rule_order(self, quad_spec, quad_rules, limits, identity_solution):
        domain = get_domain("quadratic")
        report = validate(identity_solution, quad_rules, domain, limits, quad_spec)
        assert [r.rule_id for r in report.per_rule] == [r.rule_id for r in quad_rules]

    def test_compile_failure_fails_all_downstream_rules(self, quad_spec, quad_rules, limits):
        domain = get_domain("quadratic")
        report = validate(
            make_solution("def solve(A_diag, b, x0, max_iter, tol):\n    return undefined()"),
            quad_rules,
            domain,
            limits,
            quad_spec,
        )
        # loads fine (definition only), probes fail at call time
        assert math.isinf(report.fitness)
        assert no_orphans()

    def test_performance_timeout_is_scoring_sentinel(self, quad_spec, quad_rules):
        domain = get_domain("quadratic")
        limits = ExecutionLimits(wall_time_limit=1.5)
        report = validate(
            make_solution(SLOW_ON_BIG_BUDGET), quad_rules, domain, limits, quad_spec
        )
        # probe budget is tiny (fast path); the scoring call hangs and is killed
        assert math.isfinite(report.fitness)
        assert report.metrics["suboptimality"] >= 1e9
        perf = [r for r in report.per_rule if r.rule_id == "perf-suboptimality"][0]
        assert not perf.passed
        check_report_invariants(report, quad_rules, quad_spec)
        assert no_orphans()

    def test_empty_rule_set_rejected(self, quad_spec, limits, identity_solution):
        with pytest.raises(ValueError):
            validate(identity_solution, (), get_domain("quadratic"), limits, quad_spec)
