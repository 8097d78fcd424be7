"""Deterministic guard library and registry.

A guard maps (artifact, context, dependency artifacts) to a verdict with
diagnostic feedback. Guards never mutate anything and, apart from the
human gate and external tools, are deterministic: equal inputs yield equal
verdicts.

Guards that must run untrusted generated code (syntax, dynamic_test,
characterization, coverage) delegate to an out-of-process sandbox harness
over a one-shot JSON protocol: a single request object on stdin, a single
response object on stdout, exit code 0 for protocol success regardless of
verdict, 2 for a schema-invalid request, 3 for an internal crash. Request
fields: ``action`` (parse | run_tests | run_tests_with_coverage),
``implementation``, ``tests``, ``timeoutSeconds``, ``coverageThresholds``.
Response fields: ``ok``, ``verdict`` (passed | failed | timeout |
parse_error), ``failures`` ([{name, message}]), ``coverage`` ({line,
branch} or null), ``stderrTail``, ``durationMs``.
"""

from __future__ import annotations

import os
import re
import shlex
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import GuardInfrastructureError, UnknownGuardError
from .state import Context, Verdict

DEFAULT_GUARD_TIMEOUT = 60.0
# Grace period on top of a guard's own timeout before the supervising
# process is considered hung.
SUPERVISION_GRACE = 5.0

FEEDBACK_HEAD_BYTES = 2 * 1024
FEEDBACK_TAIL_BYTES = 6 * 1024
ELISION_MARKER = "\n[... elided ...]\n"


def truncate_feedback(
    text: str,
    head_bytes: int = FEEDBACK_HEAD_BYTES,
    tail_bytes: int = FEEDBACK_TAIL_BYTES,
) -> str:
    """Cap oversized feedback, keeping the head and the diagnosing tail."""
    data = text.encode("utf-8")
    if len(data) <= head_bytes + tail_bytes:
        return text
    head = data[:head_bytes].decode("utf-8", errors="ignore")
    tail = data[-tail_bytes:].decode("utf-8", errors="ignore")
    return head + ELISION_MARKER + tail


def output_tail(text: str, limit: int = FEEDBACK_TAIL_BYTES) -> str:
    data = text.encode("utf-8")
    if len(data) <= limit:
        return text
    return data[-limit:].decode("utf-8", errors="ignore")


class GuardEvaluator:
    """Base class: stateless, shareable evaluators.

    ``deterministic`` marks guards whose verdicts can be reproduced during
    replay; the human gate and nondeterministic external tools opt out.
    """

    type_name: str = "guard"
    deterministic: bool = True

    def __init__(self, timeout_seconds: float = DEFAULT_GUARD_TIMEOUT):
        if timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        self.timeout_seconds = timeout_seconds

    def evaluate(
        self, artifact: str, ctx: Context, deps: Optional[Mapping[str, str]] = None
    ) -> Verdict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Sandbox harness client


class ShimClient:
    """Transport for sandbox requests. Subclasses implement ``run``."""

    def run(self, request: Mapping) -> Mapping:
        raise NotImplementedError


class SubprocessShimClient(ShimClient):
    """One-shot subprocess per request over the stdin/stdout JSON protocol."""

    def __init__(self, command: Optional[Sequence[str]] = None):
        if command is None:
            env_cmd = os.environ.get("GUARDFLOW_SHIM_CMD")
            if env_cmd:
                command = shlex.split(env_cmd)
            else:
                command = (sys.executable, "-m", "guardflow_shim")
        self.command = tuple(command)

    def run(self, request: Mapping) -> Mapping:
        import json

        timeout = float(request.get("timeoutSeconds", DEFAULT_GUARD_TIMEOUT))
        try:
            proc = subprocess.run(
                list(self.command),
                input=json.dumps(request).encode("utf-8"),
                capture_output=True,
                timeout=timeout + SUPERVISION_GRACE,
            )
        except FileNotFoundError as exc:
            raise GuardInfrastructureError(
                f"sandbox harness not found: {' '.join(self.command)}"
            ) from exc
        except subprocess.TimeoutExpired as exc:
            raise GuardInfrastructureError(
                f"sandbox harness hung past {timeout + SUPERVISION_GRACE:.0f}s"
            ) from exc
        if proc.returncode != 0:
            detail = output_tail(proc.stderr.decode("utf-8", errors="ignore"))
            raise GuardInfrastructureError(
                f"sandbox harness exited {proc.returncode}: {detail}"
            )
        try:
            return json.loads(proc.stdout.decode("utf-8"))
        except ValueError as exc:
            raise GuardInfrastructureError(
                f"sandbox harness produced invalid JSON: {exc}"
            ) from exc


def _first_failure_text(response: Mapping) -> str:
    failures = response.get("failures") or []
    if not failures:
        return "test run failed"
    first = failures[0]
    name = first.get("name", "")
    message = first.get("message", "")
    return f"{name}: {message}" if name else message


def _failed_feedback(prefix: str, response: Mapping) -> str:
    parts = [f"{prefix}{_first_failure_text(response)}"]
    tail = response.get("stderrTail") or ""
    if tail.strip():
        parts.append(output_tail(tail))
    return truncate_feedback("\n".join(parts))


class SyntaxGuard(GuardEvaluator):
    """Passes iff the artifact parses as a well-formed program."""

    type_name = "syntax"

    def __init__(self, shim: ShimClient, timeout_seconds: float = DEFAULT_GUARD_TIMEOUT):
        super().__init__(timeout_seconds)
        self.shim = shim

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        response = self.shim.run(
            {
                "action": "parse",
                "implementation": artifact,
                "timeoutSeconds": self.timeout_seconds,
            }
        )
        verdict = response.get("verdict")
        if verdict == "passed":
            return Verdict(True)
        if verdict == "parse_error":
            return Verdict(False, truncate_feedback(_first_failure_text(response)))
        if verdict == "timeout":
            return Verdict(False, f"timeout after {int(self.timeout_seconds)}s")
        raise GuardInfrastructureError(f"unexpected sandbox verdict: {verdict!r}")


def _sole_dependency(deps: Optional[Mapping[str, str]], wanted: Optional[str], role: str) -> str:
    deps = deps or {}
    if wanted is not None:
        if wanted not in deps:
            raise GuardInfrastructureError(f"missing {role} dependency {wanted!r}")
        return deps[wanted]
    if len(deps) == 1:
        return next(iter(deps.values()))
    raise GuardInfrastructureError(
        f"guard needs exactly one dependency for its {role}; got {sorted(deps)}"
    )


class DynamicTestGuard(GuardEvaluator):
    """Runs the dependency-supplied tests against the artifact in the sandbox."""

    type_name = "dynamic_test"

    def __init__(
        self,
        shim: ShimClient,
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
        test_dep: Optional[str] = None,
    ):
        super().__init__(timeout_seconds)
        self.shim = shim
        self.test_dep = test_dep

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        tests = _sole_dependency(deps, self.test_dep, "test artifact")
        response = self.shim.run(
            {
                "action": "run_tests",
                "implementation": artifact,
                "tests": tests,
                "timeoutSeconds": self.timeout_seconds,
            }
        )
        verdict = response.get("verdict")
        if verdict == "passed":
            return Verdict(True)
        if verdict == "timeout":
            return Verdict(False, f"timeout after {int(self.timeout_seconds)}s")
        if verdict in ("failed", "parse_error"):
            return Verdict(False, _failed_feedback("Test failed: ", response))
        raise GuardInfrastructureError(f"unexpected sandbox verdict: {verdict!r}")


class CharacterizationGuard(GuardEvaluator):
    """Oracle inversion: candidate tests must pass against the legacy code.

    The artifact under validation is the test suite; a failure blames the
    tests, because the unmodified legacy artifact is the oracle.
    """

    type_name = "characterization"

    def __init__(
        self,
        shim: ShimClient,
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
        legacy_dep: Optional[str] = None,
    ):
        super().__init__(timeout_seconds)
        self.shim = shim
        self.legacy_dep = legacy_dep

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        legacy = _sole_dependency(deps, self.legacy_dep, "legacy artifact")
        response = self.shim.run(
            {
                "action": "run_tests",
                "implementation": legacy,
                "tests": artifact,
                "timeoutSeconds": self.timeout_seconds,
            }
        )
        verdict = response.get("verdict")
        if verdict == "passed":
            return Verdict(True)
        if verdict == "timeout":
            return Verdict(False, f"timeout after {int(self.timeout_seconds)}s")
        if verdict in ("failed", "parse_error"):
            return Verdict(
                False,
                _failed_feedback(
                    "Tests failed against legacy code. The TEST is incorrect.\n", response
                ),
            )
        raise GuardInfrastructureError(f"unexpected sandbox verdict: {verdict!r}")


class CoverageGuard(GuardEvaluator):
    """Threshold gate on line and branch coverage of the implementation.

    The artifact is the test suite; the implementation comes in as the
    dependency. Thresholds of zero always pass.
    """

    type_name = "coverage"

    def __init__(
        self,
        shim: ShimClient,
        line_threshold: float = 0.8,
        branch_threshold: float = 0.7,
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
        impl_dep: Optional[str] = None,
    ):
        super().__init__(timeout_seconds)
        if not (0.0 <= line_threshold <= 1.0 and 0.0 <= branch_threshold <= 1.0):
            raise ValueError("coverage thresholds must lie in [0, 1]")
        self.shim = shim
        self.line_threshold = line_threshold
        self.branch_threshold = branch_threshold
        self.impl_dep = impl_dep

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        implementation = _sole_dependency(deps, self.impl_dep, "implementation artifact")
        response = self.shim.run(
            {
                "action": "run_tests_with_coverage",
                "implementation": implementation,
                "tests": artifact,
                "timeoutSeconds": self.timeout_seconds,
                "coverageThresholds": {
                    "line": self.line_threshold,
                    "branch": self.branch_threshold,
                },
            }
        )
        verdict = response.get("verdict")
        if verdict == "timeout":
            return Verdict(False, f"timeout after {int(self.timeout_seconds)}s")
        if verdict not in ("passed", "failed", "parse_error"):
            raise GuardInfrastructureError(f"unexpected sandbox verdict: {verdict!r}")
        coverage = response.get("coverage") or {}
        line = float(coverage.get("line", 0.0))
        branch = float(coverage.get("branch", 0.0))
        problems = []
        if line < self.line_threshold:
            problems.append(f"line coverage {line:.2f} < {self.line_threshold:.2f}")
        if branch < self.branch_threshold:
            problems.append(f"branch coverage {branch:.2f} < {self.branch_threshold:.2f}")
        if problems:
            return Verdict(False, truncate_feedback("; ".join(problems)))
        return Verdict(True)


# ---------------------------------------------------------------------------
# In-process guards


class ImportBoundaryGuard(GuardEvaluator):
    """Rejects artifacts that import a denied module, at any nesting depth."""

    type_name = "architecture"

    DEFAULT_DENY = frozenset({"boto3", "sqlalchemy", "requests", "django"})

    def __init__(
        self,
        deny_list: Optional[Sequence[str]] = None,
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
    ):
        super().__init__(timeout_seconds)
        self.deny_list = frozenset(deny_list) if deny_list is not None else self.DEFAULT_DENY

    def _denied(self, module: Optional[str]) -> Optional[str]:
        if not module:
            return None
        root = module.split(".")[0]
        if module in self.deny_list or root in self.deny_list:
            return module
        return None

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        import ast

        try:
            tree = ast.parse(artifact)
        except SyntaxError as exc:
            return Verdict(False, f"Line {exc.lineno}: {exc.msg}")
        for node in ast.walk(tree):
            if isinstance(node, ast.Import):
                for alias in node.names:
                    hit = self._denied(alias.name)
                    if hit:
                        return Verdict(False, f"Domain imports infrastructure: {hit}")
            elif isinstance(node, ast.ImportFrom):
                hit = self._denied(node.module)
                if hit:
                    return Verdict(False, f"Domain imports infrastructure: {hit}")
        return Verdict(True)


class PreCommitGuard(GuardEvaluator):
    """Commit gate: secret scan first, then formatter and linter commands.

    The external commands receive the artifact path via the
    ``{artifact_path}`` placeholder; a missing tool is an infrastructure
    error, a nonzero exit is a fail verdict.
    """

    type_name = "pre_commit"

    SECRET_PATTERNS = (
        r"(?i)(api_key|secret|password|token)\s*=\s*['\"][^'\"]+['\"]",
        r"(?i)Bearer\s+[A-Za-z0-9\-_]+\.[A-Za-z0-9\-_]+",
    )

    def __init__(
        self,
        format_command: Sequence[str] = ("black", "--check", "{artifact_path}"),
        lint_command: Sequence[str] = ("ruff", "check", "{artifact_path}"),
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
    ):
        super().__init__(timeout_seconds)
        self.format_command = tuple(format_command)
        self.lint_command = tuple(lint_command)

    def _run_tool(self, command: Tuple[str, ...], path: str) -> subprocess.CompletedProcess:
        cmd = [arg.replace("{artifact_path}", path) for arg in command]
        try:
            return subprocess.run(
                cmd, capture_output=True, text=True, timeout=self.timeout_seconds
            )
        except FileNotFoundError as exc:
            raise GuardInfrastructureError(f"tool not found: {cmd[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise GuardInfrastructureError(f"tool timed out: {cmd[0]}") from exc

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        for pattern in self.SECRET_PATTERNS:
            if re.search(pattern, artifact):
                return Verdict(False, "Security Risk: Potential hardcoded secret detected.")
        with tempfile.NamedTemporaryFile("w", suffix=".py", delete=False) as fh:
            fh.write(artifact)
            path = fh.name
        try:
            fmt = self._run_tool(self.format_command, path)
            if fmt.returncode != 0:
                return Verdict(
                    False,
                    truncate_feedback(
                        "Style Error: code is not formatted.\n"
                        + output_tail(fmt.stdout + fmt.stderr)
                    ),
                )
            lint = self._run_tool(self.lint_command, path)
            if lint.returncode != 0:
                return Verdict(
                    False,
                    truncate_feedback(
                        "Linting failed:\n" + output_tail(lint.stdout + lint.stderr)
                    ),
                )
            return Verdict(True)
        finally:
            os.unlink(path)


class HumanGuard(GuardEvaluator):
    """Interactive approval gate over an attached input/output channel."""

    type_name = "human"
    deterministic = False

    PREVIEW_CHARS = 500

    def __init__(
        self,
        prompt: str = "Approve this artifact?",
        input_fn: Callable[[], str] = input,
        output_fn: Callable[[str], None] = print,
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
    ):
        super().__init__(timeout_seconds)
        self.prompt = prompt
        self.input_fn = input_fn
        self.output_fn = output_fn

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        preview = artifact[: self.PREVIEW_CHARS]
        if len(artifact) > self.PREVIEW_CHARS:
            preview += "..."
        self.output_fn(f"\n{'=' * 20} HUMAN REVIEW {'=' * 20}")
        self.output_fn(f"\n{preview}")
        self.output_fn(f"\n{self.prompt} [y/n/feedback]: ")
        try:
            response = self.input_fn().strip()
        except (EOFError, OSError) as exc:
            raise GuardInfrastructureError("human review channel closed") from exc
        lowered = response.lower()
        if lowered == "y":
            return Verdict(True)
        if lowered == "n":
            return Verdict(False, "Human rejected artifact")
        return Verdict(False, f"Human feedback: {response}")


class CompositeGuard(GuardEvaluator):
    """Conjunction with fail-fast: the first failing verdict is returned
    unchanged and later members are never evaluated."""

    type_name = "composite"

    def __init__(self, guards: Sequence[GuardEvaluator], timeout_seconds: float = DEFAULT_GUARD_TIMEOUT):
        super().__init__(timeout_seconds)
        if not guards:
            raise ValueError("composite guard requires at least one member")
        self.guards = tuple(guards)
        self.deterministic = all(g.deterministic for g in self.guards)

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        for guard in self.guards:
            verdict = guard.evaluate(artifact, ctx, deps)
            if not verdict.passed:
                return verdict
        return Verdict(True)


class ParallelGuard(GuardEvaluator):
    """Conjunction evaluated concurrently.

    All members run to completion; failing feedback is joined by a
    ``\\n---\\n`` separator in registration order, so the result is
    deterministic regardless of completion order. Member infrastructure
    errors are raised only after every member has finished.
    """

    type_name = "parallel"

    def __init__(
        self,
        guards: Sequence[GuardEvaluator],
        max_workers: int = 4,
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
    ):
        super().__init__(timeout_seconds)
        if not guards:
            raise ValueError("parallel guard requires at least one member")
        self.guards = tuple(guards)
        self.max_workers = max_workers
        self.deterministic = all(g.deterministic for g in self.guards)

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            futures = [pool.submit(g.evaluate, artifact, ctx, deps) for g in self.guards]
            results: List = []
            errors: List[BaseException] = []
            for future in futures:
                try:
                    results.append(future.result())
                except Exception as exc:
                    results.append(None)
                    errors.append(exc)
        if errors:
            raise GuardInfrastructureError(
                f"{len(errors)} parallel member(s) failed to evaluate: {errors[0]}"
            ) from errors[0]
        failures = [v.feedback for v in results if not v.passed]
        if failures:
            return Verdict(False, "\n---\n".join(failures))
        return Verdict(True)


class ExternalCommandGuard(GuardEvaluator):
    """Extension point: verdict from an external command's exit code.

    The command template receives the artifact's temp-file path through
    ``{artifact_path}``; captured output becomes the feedback on failure.
    """

    type_name = "command"

    def __init__(
        self,
        command: Sequence[str],
        pass_exit_codes: Sequence[int] = (0,),
        timeout_seconds: float = DEFAULT_GUARD_TIMEOUT,
        artifact_suffix: str = ".py",
        deterministic: bool = True,
    ):
        super().__init__(timeout_seconds)
        if not command:
            raise ValueError("command guard requires a command")
        self.command = tuple(command)
        self.pass_exit_codes = frozenset(pass_exit_codes)
        self.artifact_suffix = artifact_suffix
        self.deterministic = deterministic

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        with tempfile.NamedTemporaryFile("w", suffix=self.artifact_suffix, delete=False) as fh:
            fh.write(artifact)
            path = fh.name
        try:
            cmd = [arg.replace("{artifact_path}", path) for arg in self.command]
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=self.timeout_seconds
                )
            except FileNotFoundError as exc:
                raise GuardInfrastructureError(f"command not found: {cmd[0]}") from exc
            except subprocess.TimeoutExpired:
                return Verdict(False, f"timeout after {int(self.timeout_seconds)}s")
            if proc.returncode in self.pass_exit_codes:
                return Verdict(True)
            return Verdict(False, truncate_feedback(output_tail(proc.stdout + proc.stderr)))
        finally:
            os.unlink(path)


class StubMarkerGuard(GuardEvaluator):
    """Benchmark double: passes iff the artifact carries a marker string."""

    type_name = "stub"

    def __init__(self, marker: str = "# verdict: pass", timeout_seconds: float = DEFAULT_GUARD_TIMEOUT):
        super().__init__(timeout_seconds)
        self.marker = marker

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        if self.marker in artifact:
            return Verdict(True)
        return Verdict(False, "artifact lacks the required marker")


class GuardRegistry:
    """Name-to-evaluator table referenced by workflow documents."""

    def __init__(self) -> None:
        self._guards: Dict[str, GuardEvaluator] = {}

    def register(self, name: str, evaluator: GuardEvaluator) -> None:
        self._guards[name] = evaluator

    def resolve(self, name: str) -> GuardEvaluator:
        try:
            return self._guards[name]
        except KeyError:
            raise UnknownGuardError(
                f"guard type {name!r} is not registered; register it before running"
            ) from None

    def names(self) -> frozenset:
        return frozenset(self._guards)

    def __contains__(self, name: str) -> bool:
        return name in self._guards


def default_registry(
    shim_command: Optional[Sequence[str]] = None,
    input_fn: Callable[[], str] = input,
    output_fn: Callable[[str], None] = print,
    guard_timeout: float = DEFAULT_GUARD_TIMEOUT,
) -> GuardRegistry:
    """Registry with the stock guard set wired to the sandbox harness.

    ``composite``, ``parallel`` and ``command`` need per-use configuration
    and are registered programmatically by callers.
    """
    shim = SubprocessShimClient(shim_command)
    registry = GuardRegistry()
    registry.register("syntax", SyntaxGuard(shim, guard_timeout))
    registry.register("dynamic_test", DynamicTestGuard(shim, guard_timeout))
    registry.register("characterization", CharacterizationGuard(shim, guard_timeout))
    registry.register("coverage", CoverageGuard(shim, timeout_seconds=guard_timeout))
    registry.register("architecture", ImportBoundaryGuard(timeout_seconds=guard_timeout))
    registry.register(
        "type",
        ExternalCommandGuard(
            ("mypy", "--no-error-summary", "{artifact_path}"), timeout_seconds=guard_timeout
        ),
    )
    registry.register("pre_commit", PreCommitGuard(timeout_seconds=guard_timeout))
    registry.register("human", HumanGuard(input_fn=input_fn, output_fn=output_fn))
    registry.register("stub", StubMarkerGuard())
    return registry
