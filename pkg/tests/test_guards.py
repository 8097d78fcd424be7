"""Guard library: verdict semantics, composition, isolation of failure
channels."""

import itertools
import sys
import time

import pytest

from conftest import ScriptedShim, StaticGuard, shim_response
from guardflow.errors import GuardInfrastructureError
from guardflow.guards import (
    CharacterizationGuard,
    CompositeGuard,
    CoverageGuard,
    DynamicTestGuard,
    ExternalCommandGuard,
    GuardRegistry,
    HumanGuard,
    ImportBoundaryGuard,
    ParallelGuard,
    PreCommitGuard,
    StubMarkerGuard,
    SubprocessShimClient,
    SyntaxGuard,
    truncate_feedback,
)
from guardflow.state import Context, Verdict

CTX = Context()

PASS_CMD = (sys.executable, "-c", "pass")
FAIL_CMD = (sys.executable, "-c", "import sys; sys.stderr.write('broken style'); sys.exit(1)")


class TestSyntaxGuard:
    def test_valid_program_passes(self, parsing_shim):
        guard = SyntaxGuard(parsing_shim)
        assert guard.evaluate("def f():\n    return 1", CTX).passed

    def test_invalid_program_fails_with_line(self, parsing_shim):
        guard = SyntaxGuard(parsing_shim)
        verdict = guard.evaluate("def f(:", CTX)
        assert not verdict.passed
        assert "Line 1" in verdict.feedback

    def test_empty_module_is_valid(self, parsing_shim):
        assert SyntaxGuard(parsing_shim).evaluate("", CTX).passed

    def test_determinism(self, parsing_shim):
        guard = SyntaxGuard(parsing_shim)
        verdicts = {guard.evaluate("def f(:", CTX) for _ in range(10)}
        assert len(verdicts) == 1

    def test_missing_harness_is_infrastructure(self):
        guard = SyntaxGuard(SubprocessShimClient(["/nonexistent/shim"]))
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("x = 1", CTX)


class TestDynamicTestGuard:
    def test_failure_carries_runner_message(self):
        shim = ScriptedShim(
            [
                shim_response(
                    "failed",
                    failures=[
                        {
                            "name": "test_pop_empty_contract",
                            "message": "IndexError: pop from empty list",
                        }
                    ],
                    stderr_tail="1 failed, 2 passed",
                )
            ]
        )
        guard = DynamicTestGuard(shim)
        verdict = guard.evaluate("impl", CTX, {"g_test": "tests"})
        assert not verdict.passed
        assert "IndexError: pop from empty list" in verdict.feedback
        assert verdict.feedback.startswith("Test failed: ")
        assert shim.requests[0]["action"] == "run_tests"
        assert shim.requests[0]["tests"] == "tests"

    def test_all_tests_passing(self):
        guard = DynamicTestGuard(ScriptedShim([shim_response("passed")]))
        assert guard.evaluate("impl", CTX, {"g_test": "tests"}).passed

    def test_timeout_becomes_fail_verdict(self):
        guard = DynamicTestGuard(ScriptedShim([shim_response("timeout")]))
        verdict = guard.evaluate("impl", CTX, {"g_test": "tests"})
        assert not verdict.passed
        assert verdict.feedback == "timeout after 60s"

    def test_missing_test_dependency_is_infrastructure(self):
        guard = DynamicTestGuard(ScriptedShim([]))
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("impl", CTX, {})

    def test_ambiguous_dependencies_need_explicit_name(self):
        guard = DynamicTestGuard(ScriptedShim([]), test_dep=None)
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("impl", CTX, {"a": "1", "b": "2"})
        named = DynamicTestGuard(ScriptedShim([shim_response("passed")]), test_dep="b")
        assert named.evaluate("impl", CTX, {"a": "1", "b": "2"}).passed


class TestCharacterizationGuard:
    def test_tests_passing_against_legacy(self):
        shim = ScriptedShim([shim_response("passed")])
        guard = CharacterizationGuard(shim)
        assert guard.evaluate("tests", CTX, {"legacy": "legacy code"}).passed
        assert shim.requests[0]["implementation"] == "legacy code"
        assert shim.requests[0]["tests"] == "tests"

    def test_failure_blames_the_test(self):
        shim = ScriptedShim(
            [shim_response("failed", failures=[{"name": "test_x", "message": "wrong"}])]
        )
        verdict = CharacterizationGuard(shim).evaluate("tests", CTX, {"legacy": "code"})
        assert not verdict.passed
        assert verdict.feedback.startswith(
            "Tests failed against legacy code. The TEST is incorrect."
        )

    def test_empty_suite_passes_vacuously(self):
        guard = CharacterizationGuard(ScriptedShim([shim_response("passed")]))
        assert guard.evaluate("", CTX, {"legacy": "code"}).passed


class TestCoverageGuard:
    def test_meets_thresholds(self):
        shim = ScriptedShim(
            [shim_response("passed", coverage={"line": 1.0, "branch": 1.0})]
        )
        guard = CoverageGuard(shim, 0.8, 0.7)
        assert guard.evaluate("tests", CTX, {"impl": "code"}).passed

    def test_below_line_threshold_reports_measured_vs_threshold(self):
        shim = ScriptedShim(
            [shim_response("failed", coverage={"line": 0.10, "branch": 1.0})]
        )
        verdict = CoverageGuard(shim, 0.8, 0.7).evaluate("tests", CTX, {"impl": "code"})
        assert not verdict.passed
        assert "0.10 < 0.80" in verdict.feedback

    def test_zero_thresholds_always_pass(self):
        shim = ScriptedShim([shim_response("failed", coverage=None)])
        guard = CoverageGuard(shim, 0.0, 0.0)
        assert guard.evaluate("tests", CTX, {"impl": "code"}).passed

    def test_thresholds_validated(self):
        with pytest.raises(ValueError):
            CoverageGuard(ScriptedShim([]), 1.5, 0.5)


class TestImportBoundaryGuard:
    @pytest.mark.parametrize("module", ["boto3", "sqlalchemy", "requests", "django"])
    def test_denied_import_named(self, module):
        verdict = ImportBoundaryGuard().evaluate(f"import {module}\n", CTX)
        assert not verdict.passed
        assert verdict.feedback == f"Domain imports infrastructure: {module}"

    def test_no_imports_passes(self):
        assert ImportBoundaryGuard().evaluate("x = 1\n", CTX).passed

    def test_from_import_detected(self):
        verdict = ImportBoundaryGuard().evaluate("from requests import get\n", CTX)
        assert not verdict.passed
        assert "requests" in verdict.feedback

    def test_submodule_of_denied_root_detected(self):
        verdict = ImportBoundaryGuard().evaluate("import requests.sessions\n", CTX)
        assert not verdict.passed

    def test_nested_import_detected(self):
        code = "def f():\n    import boto3\n    return boto3\n"
        assert not ImportBoundaryGuard().evaluate(code, CTX).passed

    def test_allowed_import_passes(self):
        assert ImportBoundaryGuard().evaluate("import json\n", CTX).passed

    def test_parse_failure_tolerated_as_fail(self):
        assert not ImportBoundaryGuard().evaluate("def f(:", CTX).passed


class TestPreCommitGuard:
    def make_guard(self, fmt=PASS_CMD, lint=PASS_CMD):
        return PreCommitGuard(format_command=fmt, lint_command=lint)

    def test_hardcoded_secret_detected(self):
        verdict = self.make_guard().evaluate('api_key = "abc123"\n', CTX)
        assert not verdict.passed
        assert "Potential hardcoded secret detected." in verdict.feedback

    def test_bearer_token_detected(self):
        verdict = self.make_guard().evaluate('h = "Bearer abc-123.def_456"\n', CTX)
        assert not verdict.passed

    def test_call_assignment_is_not_a_secret(self):
        verdict = self.make_guard().evaluate("api_key = get_key()\n", CTX)
        assert verdict.passed

    def test_clean_artifact_with_stubbed_tools_passes(self):
        assert self.make_guard().evaluate("x = 1\n", CTX).passed

    def test_format_failure_reported(self):
        verdict = self.make_guard(fmt=FAIL_CMD).evaluate("x=1\n", CTX)
        assert not verdict.passed
        assert "Style Error" in verdict.feedback

    def test_lint_failure_reported(self):
        verdict = self.make_guard(lint=FAIL_CMD).evaluate("x = 1\n", CTX)
        assert not verdict.passed
        assert "Linting failed" in verdict.feedback

    def test_missing_tool_is_infrastructure(self):
        guard = self.make_guard(fmt=("/no/such/formatter", "{artifact_path}"))
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("x = 1\n", CTX)


class TestHumanGuard:
    def make_guard(self, responses, sink=None):
        queue = list(responses)
        return HumanGuard(
            input_fn=lambda: queue.pop(0),
            output_fn=(sink.append if sink is not None else (lambda s: None)),
        )

    def test_approval(self):
        assert self.make_guard(["y"]).evaluate("code", CTX).passed

    def test_rejection(self):
        verdict = self.make_guard(["n"]).evaluate("code", CTX)
        assert not verdict.passed
        assert verdict.feedback == "Human rejected artifact"

    def test_free_text_becomes_feedback(self):
        verdict = self.make_guard(["rename the class"]).evaluate("code", CTX)
        assert not verdict.passed
        assert verdict.feedback == "Human feedback: rename the class"

    def test_preview_truncated_to_500_chars(self):
        sink = []
        self.make_guard(["y"], sink).evaluate("x" * 600, CTX)
        preview = next(s for s in sink if "x" in s)
        assert "x" * 500 + "..." in preview
        assert "x" * 501 not in preview

    def test_closed_channel_is_infrastructure(self):
        def closed():
            raise EOFError

        guard = HumanGuard(input_fn=closed, output_fn=lambda s: None)
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("code", CTX)


class TestCompositeGuard:
    def test_first_failure_returned_unchanged(self):
        failing = StaticGuard(Verdict(False, "specific feedback"))
        guard = CompositeGuard([StaticGuard(Verdict(True)), failing])
        verdict = guard.evaluate("a", CTX)
        assert verdict == Verdict(False, "specific feedback")

    def test_fail_fast_skips_later_members(self):
        first = StaticGuard(Verdict(False, "f1"))
        second = StaticGuard(Verdict(False, "f2"))
        verdict = CompositeGuard([first, second]).evaluate("a", CTX)
        assert verdict.feedback == "f1"
        assert first.calls == 1
        assert second.calls == 0

    def test_empty_list_rejected_at_construction(self):
        with pytest.raises(ValueError):
            CompositeGuard([])

    def test_all_passing(self):
        guard = CompositeGuard([StaticGuard(Verdict(True)), StaticGuard(Verdict(True))])
        assert guard.evaluate("a", CTX).passed


class TestParallelGuard:
    def test_all_passing(self):
        guard = ParallelGuard([StaticGuard(Verdict(True)) for _ in range(3)])
        assert guard.evaluate("a", CTX).passed

    def test_failures_joined_in_registration_order(self):
        guard = ParallelGuard(
            [
                StaticGuard(Verdict(True)),
                StaticGuard(Verdict(False, "first message")),
                StaticGuard(Verdict(False, "second message")),
            ]
        )
        verdict = guard.evaluate("a", CTX)
        assert verdict.feedback == "first message\n---\nsecond message"

    def test_equivalent_to_conjunction_over_all_combinations(self):
        for bits in itertools.product([True, False], repeat=4):
            members = [
                StaticGuard(Verdict(passed, "" if passed else f"m{i}"))
                for i, passed in enumerate(bits)
            ]
            parallel = ParallelGuard(members).evaluate("a", CTX)
            sequential = [m.verdict for m in members]
            assert parallel.passed == all(v.passed for v in sequential)
            expected_feedback = "\n---\n".join(
                v.feedback for v in sequential if not v.passed
            )
            assert parallel.feedback == expected_feedback
            assert all(m.calls == 1 for m in members)

    def test_member_infrastructure_error_raised_after_all_complete(self):
        class Exploding(StaticGuard):
            def evaluate(self, artifact, ctx, deps=None):
                self.calls += 1
                raise GuardInfrastructureError("sandbox gone")

        survivor = StaticGuard(Verdict(True))
        guard = ParallelGuard([Exploding(Verdict(True)), survivor])
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("a", CTX)
        assert survivor.calls == 1

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            ParallelGuard([])


class TestExternalCommandGuard:
    def test_passing_command(self):
        guard = ExternalCommandGuard(PASS_CMD)
        assert guard.evaluate("anything", CTX).passed

    def test_failing_command_captures_output(self):
        guard = ExternalCommandGuard(FAIL_CMD)
        verdict = guard.evaluate("anything", CTX)
        assert not verdict.passed
        assert "broken style" in verdict.feedback

    def test_artifact_path_substitution(self):
        reader = (
            sys.executable,
            "-c",
            "import sys; sys.exit(0 if 'NEEDLE' in open(sys.argv[1]).read() else 1)",
            "{artifact_path}",
        )
        guard = ExternalCommandGuard(reader)
        assert guard.evaluate("has NEEDLE inside", CTX).passed
        assert not guard.evaluate("nothing here", CTX).passed

    def test_timeout_is_fail_with_feedback(self):
        sleeper = (sys.executable, "-c", "import time; time.sleep(30)")
        guard = ExternalCommandGuard(sleeper, timeout_seconds=1.0)
        started = time.monotonic()
        verdict = guard.evaluate("a", CTX)
        elapsed = time.monotonic() - started
        assert not verdict.passed
        assert "timeout after 1s" in verdict.feedback
        assert elapsed < 1.0 + 5.0

    def test_missing_command_is_infrastructure(self):
        guard = ExternalCommandGuard(("/no/such/tool",))
        with pytest.raises(GuardInfrastructureError):
            guard.evaluate("a", CTX)

    def test_custom_pass_exit_codes(self):
        exits_two = (sys.executable, "-c", "import sys; sys.exit(2)")
        assert ExternalCommandGuard(exits_two, pass_exit_codes=(2,)).evaluate("a", CTX).passed


class TestFeedbackTruncation:
    def test_short_feedback_verbatim(self):
        text = "IndexError: pop from empty list"
        assert truncate_feedback(text) == text

    def test_long_feedback_keeps_head_and_tail(self):
        text = "HEAD" + "x" * 20000 + "TAIL DIAGNOSIS"
        out = truncate_feedback(text)
        assert out.startswith("HEAD")
        assert out.endswith("TAIL DIAGNOSIS")
        assert "[... elided ...]" in out
        assert len(out.encode("utf-8")) < len(text.encode("utf-8"))


class TestRegistry:
    def test_resolve_unknown_name(self):
        from guardflow.errors import UnknownGuardError

        registry = GuardRegistry()
        with pytest.raises(UnknownGuardError):
            registry.resolve("ghost")

    def test_register_and_resolve(self):
        registry = GuardRegistry()
        guard = StubMarkerGuard()
        registry.register("stub", guard)
        assert registry.resolve("stub") is guard
        assert "stub" in registry


class TestStubMarkerGuard:
    def test_marker_present(self):
        assert StubMarkerGuard().evaluate("x = 1  # verdict: pass", CTX).passed

    def test_marker_absent(self):
        verdict = StubMarkerGuard().evaluate("x = 1", CTX)
        assert not verdict.passed
        assert verdict.feedback
