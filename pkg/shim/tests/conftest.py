"""Fixtures for the sandbox harness suite.

Requests go through the real wire: a fresh subprocess per call, JSON on
stdin, JSON on stdout.
"""

from __future__ import annotations

import json
import subprocess
import sys
from typing import Dict, Optional, Tuple

import pytest

SHIM_CMD = (sys.executable, "-m", "guardflow_shim")


def invoke(request: Dict, raw_stdin: Optional[bytes] = None) -> Tuple[int, Dict]:
    payload = raw_stdin if raw_stdin is not None else json.dumps(request).encode("utf-8")
    proc = subprocess.run(list(SHIM_CMD), input=payload, capture_output=True)
    body = json.loads(proc.stdout) if proc.stdout else {}
    return proc.returncode, body


@pytest.fixture
def shim():
    return invoke


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

DISPATCH_TEN_LINES = '''def dispatch(n):
    if n == 1:
        return "a"
    if n == 2:
        return "b"
    if n == 3:
        return "c"
    if n == 4:
        return "d"
    return "z"
'''

DISPATCH_LOW_TESTS = '''def test_one():
    assert dispatch(1) == "a"
'''

DISPATCH_FULL_TESTS = '''def test_all():
    assert dispatch(1) == "a"
    assert dispatch(2) == "b"
    assert dispatch(3) == "c"
    assert dispatch(4) == "d"
    assert dispatch(0) == "z"
'''
