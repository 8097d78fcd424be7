"""Acceptance: the harness wire contract.

Criterion 7: parse errors carry line info; a failing run names the real
runtime error; infinite loops produce a timeout verdict within the grace
window; and measured coverage flips the engine-side threshold gate on
fixed fixtures.
"""

import time
from contextlib import contextmanager

import pytest

from conftest import (
    BUGGY_STACK,
    DISPATCH_FULL_TESTS,
    DISPATCH_LOW_TESTS,
    DISPATCH_TEN_LINES,
)


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def check(number: int, description: str):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"ACCEPTANCE {number}: FAIL - {description}", flush=True)
            raise
        with capsys.disabled():
            print(f"ACCEPTANCE {number}: PASS - {description}", flush=True)

    return check


def test_criterion_7_shim_contract(criterion, shim):
    with criterion(7, "sandbox harness honors the wire contract"):
        rc, resp = shim({"action": "parse", "implementation": "def f(:"})
        assert rc == 0
        assert resp["verdict"] == "parse_error"
        assert "Line 1" in resp["failures"][0]["message"]

        rc, resp = shim(
            {
                "action": "run_tests",
                "implementation": BUGGY_STACK,
                "tests": (
                    "def test_pop_empty_contract():\n"
                    "    s = Stack()\n"
                    "    try:\n"
                    "        s.pop()\n"
                    "    except IndexError as exc:\n"
                    "        if 'empty stack' not in str(exc):\n"
                    "            raise\n"
                    "        return\n"
                    "    raise AssertionError('expected IndexError')\n"
                ),
                "timeoutSeconds": 30,
            }
        )
        assert rc == 0
        assert resp["verdict"] == "failed"
        assert any(
            "IndexError: pop from empty list" in f["message"] for f in resp["failures"]
        )

        started = time.monotonic()
        rc, resp = shim(
            {
                "action": "run_tests",
                "implementation": "while True:\n    pass\n",
                "tests": "def test_x():\n    assert True\n",
                "timeoutSeconds": 2,
            }
        )
        assert rc == 0
        assert resp["verdict"] == "timeout"
        assert time.monotonic() - started <= 2 + 2

        rc, low = shim(
            {
                "action": "run_tests_with_coverage",
                "implementation": DISPATCH_TEN_LINES,
                "tests": DISPATCH_LOW_TESTS,
                "timeoutSeconds": 60,
            }
        )
        assert rc == 0
        rc, full = shim(
            {
                "action": "run_tests_with_coverage",
                "implementation": DISPATCH_TEN_LINES,
                "tests": DISPATCH_FULL_TESTS,
                "timeoutSeconds": 60,
            }
        )
        assert rc == 0

        def gate(coverage, line_threshold=0.8, branch_threshold=0.7):
            return (
                coverage["line"] >= line_threshold
                and coverage["branch"] >= branch_threshold
            )

        assert gate(low["coverage"]) is False
        assert gate(full["coverage"]) is True
