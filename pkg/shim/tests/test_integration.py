"""Engine guards driving the real harness over the wire.

These tests exercise the exact surfaces the engine uses in production:
SubprocessShimClient spawning ``python -m guardflow_shim`` per request.
"""

import pytest

guardflow = pytest.importorskip("guardflow")

from conftest import (
    BUGGY_STACK,
    DISPATCH_FULL_TESTS,
    DISPATCH_LOW_TESTS,
    DISPATCH_TEN_LINES,
    FIXED_STACK,
    SHIM_CMD,
    STACK_TESTS,
)
from guardflow.executor import RunConfig, RunStatus, execute_workflow
from guardflow.generator import fence, scripted_generator
from guardflow.guards import (
    CoverageGuard,
    DynamicTestGuard,
    GuardRegistry,
    SubprocessShimClient,
    SyntaxGuard,
)
from guardflow.repository import RepositoryLog
from guardflow.state import Context
from guardflow.workflow import parse

TDD_STACK_DOCUMENT = '''{
  "version": "1.0",
  "workflows": {
    "tdd_stack": {
      "name": "Stack",
      "specification": "Implement a Stack class with push, pop, peek, is_empty, and size methods.",
      "steps": {
        "g_test": {
          "prompt": "Write pytest test functions for a Stack class.\\nOutput ONLY the test code.",
          "guard": "syntax"
        },
        "g_impl": {
          "prompt": "Write a Python Stack class: {specification}\\nIt must pass:\\n{test_code}",
          "guard": "dynamic_test",
          "requires": ["g_test"],
          "bindings": {"test_code": "g_test"}
        }
      }
    }
  }
}
'''


@pytest.fixture(scope="module")
def client():
    return SubprocessShimClient(SHIM_CMD)


class TestGuardsOverTheWire:
    def test_syntax_guard(self, client):
        guard = SyntaxGuard(client, timeout_seconds=30)
        assert guard.evaluate("def f():\n    return 1\n", Context()).passed
        verdict = guard.evaluate("def f(:", Context())
        assert not verdict.passed
        assert "Line 1" in verdict.feedback

    def test_dynamic_test_guard_failure_feedback(self, client):
        guard = DynamicTestGuard(client, timeout_seconds=30)
        verdict = guard.evaluate(BUGGY_STACK, Context(), {"g_test": STACK_TESTS})
        assert not verdict.passed
        assert "IndexError: pop from empty list" in verdict.feedback

    def test_dynamic_test_guard_pass(self, client):
        guard = DynamicTestGuard(client, timeout_seconds=30)
        assert guard.evaluate(FIXED_STACK, Context(), {"g_test": STACK_TESTS}).passed

    def test_coverage_guard_threshold_flip(self, client):
        strict = CoverageGuard(client, 0.8, 0.7, timeout_seconds=60)
        low = strict.evaluate(DISPATCH_LOW_TESTS, Context(), {"impl": DISPATCH_TEN_LINES})
        assert not low.passed
        assert "0.30 < 0.80" in low.feedback
        full = strict.evaluate(DISPATCH_FULL_TESTS, Context(), {"impl": DISPATCH_TEN_LINES})
        assert full.passed

    def test_guard_timeout_verdict(self, client):
        guard = DynamicTestGuard(client, timeout_seconds=2)
        verdict = guard.evaluate(
            "while True:\n    pass\n", Context(), {"g_test": "def test_x():\n    assert True\n"}
        )
        assert not verdict.passed
        assert "timeout after 2s" in verdict.feedback


class TestWorkflowEndToEnd:
    def test_tdd_stack_with_real_guards(self):
        spec = parse(TDD_STACK_DOCUMENT)
        client = SubprocessShimClient(SHIM_CMD)
        registry = GuardRegistry()
        registry.register("syntax", SyntaxGuard(client, timeout_seconds=60))
        registry.register("dynamic_test", DynamicTestGuard(client, timeout_seconds=60))
        generator = scripted_generator(
            {
                "g_test": [fence(STACK_TESTS)],
                "g_impl": [fence(BUGGY_STACK), fence(FIXED_STACK)],
            }
        )
        repository = RepositoryLog()
        outcome = execute_workflow(spec, registry, generator, repository, RunConfig(r_max=3))
        assert outcome.status is RunStatus.SUCCESS
        assert [(e.node_id, e.attempt, e.verdict.passed) for e in outcome.trace] == [
            ("g_test", 1, True),
            ("g_impl", 1, False),
            ("g_impl", 2, True),
        ]
        assert "IndexError: pop from empty list" in outcome.trace[1].verdict.feedback
        assert outcome.retries == 1
        assert repository.verify_chain()
