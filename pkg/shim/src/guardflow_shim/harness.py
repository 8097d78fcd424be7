"""Request handling for the one-shot sandbox worker.

Wire format (all JSON, UTF-8):

request  = {"action": "parse" | "run_tests" | "run_tests_with_coverage",
            "implementation": str,
            "tests": str,                      # required for run_tests*
            "timeoutSeconds": number,          # default 60
            "coverageThresholds": {"line": x, "branch": y}}   # optional
response = {"ok": bool,
            "verdict": "passed" | "failed" | "timeout" | "parse_error",
            "failures": [{"name": str, "message": str}],
            "coverage": {"line": x, "branch": y} | null,
            "stderrTail": str,                 # last 6 KiB of runner output
            "durationMs": number}

Exit codes: 0 protocol success regardless of verdict, 2 schema-invalid
request, 3 internal crash. Generated code is executed only in a child
process inside a fresh temp directory (removed afterward) and killed at
the wall-clock timeout.
"""

from __future__ import annotations

import ast
import json
import os
import signal
import subprocess
import sys
import tempfile
import time
import xml.etree.ElementTree as ET
from typing import Dict, List, Optional, Tuple

DEFAULT_TIMEOUT = 60.0
STDERR_TAIL_BYTES = 6 * 1024

IMPL_FILE = "implementation.py"
TEST_FILE = "test_impl.py"
REPORT_FILE = ".report.xml"
COVERAGE_FILE = ".coverage.json"

# Test files import the implementation's names directly; a generated suite
# is not required to manage its own imports.
TEST_HEADER = "from implementation import *  # injected by the harness\n\n"

VALID_ACTIONS = ("parse", "run_tests", "run_tests_with_coverage")


class SchemaError(Exception):
    """Request does not match the wire schema (exit 2)."""


class InternalError(Exception):
    """The harness itself failed (exit 3); never an artifact verdict."""


def _tail(text: str, limit: int = STDERR_TAIL_BYTES) -> str:
    data = text.encode("utf-8", errors="replace")
    if len(data) <= limit:
        return text
    return data[-limit:].decode("utf-8", errors="ignore")


def validate_request(raw: Dict) -> Dict:
    if not isinstance(raw, dict):
        raise SchemaError("request must be a JSON object")
    action = raw.get("action")
    if action not in VALID_ACTIONS:
        raise SchemaError(f"action must be one of {VALID_ACTIONS}, got {action!r}")
    implementation = raw.get("implementation")
    if not isinstance(implementation, str):
        raise SchemaError("implementation must be a string")
    tests = raw.get("tests")
    if action in ("run_tests", "run_tests_with_coverage") and not isinstance(tests, str):
        raise SchemaError(f"{action} requires a 'tests' string")
    timeout = raw.get("timeoutSeconds", DEFAULT_TIMEOUT)
    if not isinstance(timeout, (int, float)) or timeout <= 0:
        raise SchemaError("timeoutSeconds must be a positive number")
    thresholds = raw.get("coverageThresholds")
    if thresholds is not None:
        if not isinstance(thresholds, dict):
            raise SchemaError("coverageThresholds must be an object")
        for key in ("line", "branch"):
            value = thresholds.get(key)
            if value is not None and not isinstance(value, (int, float)):
                raise SchemaError(f"coverageThresholds.{key} must be a number")
    return {
        "action": action,
        "implementation": implementation,
        "tests": tests,
        "timeout": float(timeout),
    }


def _response(
    verdict: str,
    failures: Optional[List[Dict]] = None,
    coverage: Optional[Dict] = None,
    stderr_tail: str = "",
    started: float = 0.0,
) -> Dict:
    return {
        "ok": True,
        "verdict": verdict,
        "failures": failures or [],
        "coverage": coverage,
        "stderrTail": _tail(stderr_tail),
        "durationMs": (time.monotonic() - started) * 1000.0,
    }


def do_parse(implementation: str, started: float) -> Dict:
    try:
        ast.parse(implementation)
    except SyntaxError as exc:
        return _response(
            "parse_error",
            failures=[{"name": "parse", "message": f"Line {exc.lineno}: {exc.msg}"}],
            started=started,
        )
    except ValueError as exc:
        return _response(
            "parse_error",
            failures=[{"name": "parse", "message": str(exc)}],
            started=started,
        )
    return _response("passed", started=started)


def parse_junit(path: str) -> List[Dict]:
    """Failures and errors from a junit report, in document order."""
    failures: List[Dict] = []
    root = ET.parse(path).getroot()
    for testcase in root.iter("testcase"):
        for child in testcase:
            if child.tag not in ("failure", "error"):
                continue
            message = child.get("message") or ""
            detail = (child.text or "").strip()
            if detail and child.tag == "error":
                message = f"{message}\n{_tail(detail, 2048)}" if message else _tail(detail, 2048)
            failures.append(
                {"name": testcase.get("name") or testcase.get("classname") or "", "message": message}
            )
    return failures


def _run_killable(cmd: List[str], cwd: str, timeout: float) -> Tuple[Optional[int], str]:
    """Run a child in its own process group; kill the whole group on timeout.

    Returns (returncode, combined output); returncode None means timeout.
    """
    proc = subprocess.Popen(
        cmd,
        cwd=cwd,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        start_new_session=True,
    )
    try:
        out, _ = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
        return None, ""
    return proc.returncode, out.decode("utf-8", errors="replace")


def _verdict_from_pytest(
    rc: int, report_path: str, output: str, started: float, coverage: Optional[Dict]
) -> Dict:
    failures: List[Dict] = []
    if os.path.exists(report_path):
        try:
            failures = parse_junit(report_path)
        except ET.ParseError:
            failures = []
    if rc in (0, 5):
        # 5 is "no tests collected": an empty suite passes vacuously.
        return _response("passed", coverage=coverage, stderr_tail=output, started=started)
    if rc == 1 or (rc == 2 and failures):
        return _response(
            "failed", failures=failures, coverage=coverage, stderr_tail=output, started=started
        )
    raise InternalError(f"test runner exited {rc}: {_tail(output, 1024)}")


def do_run_tests(implementation: str, tests: str, timeout: float, started: float) -> Dict:
    with tempfile.TemporaryDirectory(prefix="guardflow-shim-") as tmpdir:
        with open(os.path.join(tmpdir, IMPL_FILE), "w", encoding="utf-8") as fh:
            fh.write(implementation)
        with open(os.path.join(tmpdir, TEST_FILE), "w", encoding="utf-8") as fh:
            fh.write(TEST_HEADER + tests)
        cmd = [
            sys.executable,
            "-m",
            "pytest",
            TEST_FILE,
            "-q",
            "--junit-xml",
            REPORT_FILE,
            "-p",
            "no:cacheprovider",
        ]
        rc, output = _run_killable(cmd, tmpdir, timeout)
        if rc is None:
            return _response("timeout", started=started)
        return _verdict_from_pytest(
            rc, os.path.join(tmpdir, REPORT_FILE), output, started, None
        )


def do_run_tests_with_coverage(
    implementation: str, tests: str, timeout: float, started: float
) -> Dict:
    with tempfile.TemporaryDirectory(prefix="guardflow-shim-") as tmpdir:
        with open(os.path.join(tmpdir, IMPL_FILE), "w", encoding="utf-8") as fh:
            fh.write(implementation)
        with open(os.path.join(tmpdir, TEST_FILE), "w", encoding="utf-8") as fh:
            fh.write(TEST_HEADER + tests)
        cmd = [
            sys.executable,
            "-m",
            "guardflow_shim.covrun",
            IMPL_FILE,
            TEST_FILE,
            COVERAGE_FILE,
        ]
        rc, output = _run_killable(cmd, tmpdir, timeout)
        if rc is None:
            return _response("timeout", started=started)
        coverage = None
        coverage_path = os.path.join(tmpdir, COVERAGE_FILE)
        if os.path.exists(coverage_path):
            with open(coverage_path, "r", encoding="utf-8") as fh:
                coverage = json.load(fh)
        return _verdict_from_pytest(
            rc, os.path.join(tmpdir, REPORT_FILE), output, started, coverage
        )


def handle(raw_request: Dict) -> Dict:
    request = validate_request(raw_request)
    started = time.monotonic()
    action = request["action"]
    if action == "parse":
        return do_parse(request["implementation"], started)
    if action == "run_tests":
        return do_run_tests(
            request["implementation"], request["tests"], request["timeout"], started
        )
    return do_run_tests_with_coverage(
        request["implementation"], request["tests"], request["timeout"], started
    )


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    try:
        raw = json.loads(stdin.read())
    except ValueError as exc:
        stdout.write(json.dumps({"ok": False, "error": f"invalid request JSON: {exc}"}))
        return 2
    try:
        response = handle(raw)
    except SchemaError as exc:
        stdout.write(json.dumps({"ok": False, "error": str(exc)}))
        return 2
    except Exception as exc:
        stdout.write(json.dumps({"ok": False, "error": f"internal error: {exc}"}))
        return 3
    stdout.write(json.dumps(response))
    return 0
