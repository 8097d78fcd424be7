"""Shared doubles and fixtures.

The sandbox harness is a separate process in production; unit tests here
substitute in-process doubles that speak the same response schema, so the
engine's mapping from responses to verdicts is exercised without spawning
anything.
"""

from __future__ import annotations

import ast
from typing import Dict, List, Mapping, Optional, Sequence

import pytest

from guardflow.guards import GuardEvaluator, ShimClient
from guardflow.state import Verdict


def shim_response(
    verdict: str,
    failures: Optional[List[Dict]] = None,
    coverage: Optional[Dict] = None,
    stderr_tail: str = "",
) -> Dict:
    return {
        "ok": True,
        "verdict": verdict,
        "failures": failures or [],
        "coverage": coverage,
        "stderrTail": stderr_tail,
        "durationMs": 0.0,
    }


class ParsingShim(ShimClient):
    """Honest in-process double for the parse action.

    Syntax verdicts come from the reference parser, which is exactly the
    oracle the production harness wraps.
    """

    def __init__(self):
        self.requests: List[Mapping] = []

    def run(self, request: Mapping) -> Mapping:
        self.requests.append(dict(request))
        if request["action"] != "parse":
            raise AssertionError(f"ParsingShim only handles parse, got {request['action']}")
        try:
            ast.parse(request["implementation"])
        except SyntaxError as exc:
            return shim_response(
                "parse_error",
                failures=[{"name": "parse", "message": f"Line {exc.lineno}: {exc.msg}"}],
            )
        return shim_response("passed")


class ScriptedShim(ShimClient):
    """Replays canned responses in order; records every request."""

    def __init__(self, responses: Sequence[Mapping]):
        self.responses = list(responses)
        self.requests: List[Mapping] = []

    def run(self, request: Mapping) -> Mapping:
        self.requests.append(dict(request))
        if not self.responses:
            raise AssertionError("ScriptedShim ran out of responses")
        return self.responses.pop(0)


class StaticGuard(GuardEvaluator):
    """Always returns the same verdict; counts evaluations."""

    type_name = "static"

    def __init__(self, verdict: Verdict):
        super().__init__()
        self.verdict = verdict
        self.calls = 0

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        self.calls += 1
        return self.verdict


class SequenceGuard(GuardEvaluator):
    """Returns scripted verdicts call by call."""

    type_name = "sequence"

    def __init__(self, verdicts: Sequence[Verdict]):
        super().__init__()
        self.verdicts = list(verdicts)
        self.calls = 0

    def evaluate(self, artifact, ctx, deps=None) -> Verdict:
        self.calls += 1
        if not self.verdicts:
            raise AssertionError("SequenceGuard ran out of verdicts")
        return self.verdicts.pop(0)


class RecordingGenerator:
    """Wraps a generator and keeps every prompt it was asked to complete."""

    def __init__(self, inner):
        self.inner = inner
        self.prompts: List[str] = []

    def generate(self, prompt: str, *, node_id: str = "", attempt: int = 1):
        self.prompts.append(prompt)
        return self.inner.generate(prompt, node_id=node_id, attempt=attempt)


BUGGY_STACK = '''class Stack:
    def __init__(self):
        self._items = []

    def push(self, item):
        self._items.append(item)

    def pop(self):
        return self._items.pop()

    def peek(self):
        return self._items[-1] if self._items else None

    def is_empty(self):
        return not self._items

    def size(self):
        return len(self._items)
'''

FIXED_STACK = '''class Stack:
    def __init__(self):
        self._items = []

    def push(self, item):
        self._items.append(item)

    def pop(self):
        if not self._items:
            raise IndexError("pop from empty stack")
        return self._items.pop()

    def peek(self):
        return self._items[-1] if self._items else None

    def is_empty(self):
        return not self._items

    def size(self):
        return len(self._items)
'''

STACK_TESTS = '''def test_push_pop():
    s = Stack()
    s.push(1)
    assert s.pop() == 1

def test_is_empty():
    s = Stack()
    assert s.is_empty()
    s.push(1)
    assert not s.is_empty()

def test_pop_empty_contract():
    s = Stack()
    try:
        s.pop()
    except IndexError as exc:
        if "empty stack" not in str(exc):
            raise
        return
    raise AssertionError("expected IndexError")
'''

TDD_STACK_DOCUMENT = '''{
  "version": "1.0",
  "workflows": {
    "tdd_stack": {
      "name": "Stack",
      "specification": "Implement a Stack class with push, pop, peek, is_empty, and size methods.",
      "steps": {
        "g_test": {
          "prompt": "Write pytest test functions for a Stack class with push, pop, peek, is_empty, and size methods.\\nOutput ONLY the test code.",
          "guard": "syntax"
        },
        "g_impl": {
          "prompt": "Write a Python Stack class for this task: {specification}\\nYou must implement code that passes the following tests:\\n{test_code}",
          "guard": "dynamic_test",
          "requires": ["g_test"],
          "bindings": {"test_code": "g_test"}
        }
      }
    }
  }
}
'''


@pytest.fixture
def tdd_document() -> str:
    return TDD_STACK_DOCUMENT


@pytest.fixture
def parsing_shim() -> ParsingShim:
    return ParsingShim()
