import pytest

from coevo.model import CycleError, dependency_order
from coevo.sourcecode import (
    SourceParseError,
    extract_code_block,
    missing_references,
    replace_unit,
    solution_from_source,
    solution_source,
)

MODULE = '''
import numpy as np

SCALE = 2.0

def helper(x):
    """Scaled sum."""
    return SCALE * np.asarray(x).sum()

def solve(x0):
    return {"x": helper(x0)}
'''


class TestExtractCodeBlock:
    def test_fenced_block(self):
        assert extract_code_block("before\n```python\ncode here\n```\nafter") == "code here\n"

    def test_language_tag_optional(self):
        assert extract_code_block("```\nplain\n```") == "plain\n"

    def test_no_fence_returns_whole_text(self):
        assert extract_code_block("just code") == "just code"

    def test_first_block_wins(self):
        text = "```python\nfirst\n```\n```python\nsecond\n```"
        assert extract_code_block(text) == "first\n"


class TestSolutionFromSource:
    def test_units_and_deps(self):
        sol = solution_from_source(MODULE, "solve")
        assert set(sol.units) == {"helper", "solve"}
        assert sol.deps == frozenset({("solve", "helper")})
        assert sol.entrypoint == "solve"
        assert dependency_order(sol) == ["helper", "solve"]

    def test_imports_and_constants_hoisted_into_units(self):
        sol = solution_from_source(MODULE, "solve")
        assert "import numpy as np" in sol.units["helper"].source
        assert "SCALE = 2.0" in sol.units["helper"].source
        assert sol.units["helper"].doc == "Scaled sum."

    def test_signature_extraction(self):
        sol = solution_from_source("def f(a, b=1):\n    return a + b", "f")
        assert sol.units["f"].signature.param_names == ("a", "b")

    def test_syntax_error(self):
        with pytest.raises(SourceParseError):
            solution_from_source("def broken(:", "broken")

    def test_missing_entrypoint(self):
        with pytest.raises(SourceParseError):
            solution_from_source("def f():\n    return 1", "solve")

    def test_duplicate_names_rejected(self):
        with pytest.raises(SourceParseError):
            solution_from_source("def f():\n    return 1\n\ndef f():\n    return 2", "f")

    def test_non_function_top_level_rejected(self):
        with pytest.raises(SourceParseError):
            solution_from_source("class C:\n    pass\n\ndef f():\n    return 1", "f")

    def test_mutual_recursion_is_a_cycle(self):
        src = "def f(x):\n    return g(x)\n\ndef g(x):\n    return f(x)"
        with pytest.raises(CycleError):
            solution_from_source(src, "f")

    def test_parse_is_idempotent(self):
        sol = solution_from_source(MODULE, "solve")
        again = solution_from_source(solution_source(sol), "solve")
        assert again.digest() == sol.digest()


class TestReplaceUnit:
    def test_only_target_unit_changes(self):
        sol = solution_from_source(MODULE, "solve")
        new = replace_unit(sol, "helper", "import numpy as np\n\ndef helper(x):\n    return 3.0 * np.asarray(x).sum()")
        assert new.units["solve"].source == sol.units["solve"].source
        assert new.units["helper"].source != sol.units["helper"].source
        assert "3.0" in new.units["helper"].source

    def test_rewrite_can_change_deps(self):
        sol = solution_from_source(MODULE, "solve")
        new = replace_unit(sol, "solve", "def solve(x0):\n    return {\"x\": 0.0}")
        assert new.deps == frozenset()

    def test_wrong_function_name_rejected(self):
        sol = solution_from_source(MODULE, "solve")
        with pytest.raises(SourceParseError):
            replace_unit(sol, "helper", "def other(x):\n    return x")

    def test_unknown_unit_rejected(self):
        sol = solution_from_source(MODULE, "solve")
        with pytest.raises(SourceParseError):
            replace_unit(sol, "ghost", "def ghost(x):\n    return x")


class TestMissingReferences:
    def test_undefined_call_detected(self):
        sol = solution_from_source("def solve(x):\n    return helper(x)", "solve")
        assert missing_references(sol) == {"helper"}

    def test_builtins_and_imports_allowed(self):
        src = "def solve(x):\n    import math\n    return math.sqrt(len(x))"
        assert missing_references(solution_from_source(src, "solve")) == set()

    def test_local_bindings_allowed(self):
        src = "def solve(x):\n    f = sorted\n    return f(x)"
        assert missing_references(solution_from_source(src, "solve")) == set()

    def test_cross_unit_calls_allowed(self):
        sol = solution_from_source(MODULE, "solve")
        assert missing_references(sol) == set()
