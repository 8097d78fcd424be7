"""Line and branch coverage for a single implementation file.

Measurement is arc-based on top of ``sys.settrace``: per frame of the
target file, consecutive line events yield (prev, line) arcs and a frame
return yields (line, EXIT). Static analysis over the AST turns those arcs
into branch outcomes:

* a decision statement (``if`` / ``while`` / ``for``) contributes two
  outcomes;
* the true outcome is taken when an arc enters the first body line from a
  condition line;
* the false outcome is taken when an arc leaves a condition line for the
  explicit else entry, or (without an else) for any line outside the body
  and condition, including frame exit.

Limitations, by design of the line-event granularity: compound one-liners
(``if x: y()``) are not measurable as branches and are excluded from the
denominator; code run in threads started before installation is unseen.
Tests are never measured, only the implementation file.
"""

from __future__ import annotations

import ast
import dis
import os
import sys
import threading
import types
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

EXIT = -1


def executable_lines(source: str, filename: str = "<implementation>") -> Set[int]:
    """Line numbers carrying executable statements, nested scopes included."""
    lines: Set[int] = set()
    stack = [compile(source, filename, "exec")]
    while stack:
        code = stack.pop()
        lines.update(line for _, line in dis.findlinestarts(code) if line is not None)
        for const in code.co_consts:
            if isinstance(const, types.CodeType):
                stack.append(const)
    return lines


@dataclass(frozen=True)
class BranchPoint:
    condition_lines: FrozenSet[int]
    body_lines: FrozenSet[int]
    body_entry: int
    else_entry: Optional[int]


def _subtree_lines(node: ast.AST) -> Set[int]:
    return {n.lineno for n in ast.walk(node) if hasattr(n, "lineno")}


def branch_points(source: str) -> List[BranchPoint]:
    points: List[BranchPoint] = []
    for node in ast.walk(ast.parse(source)):
        if isinstance(node, (ast.If, ast.While)):
            condition: ast.AST = node.test
        elif isinstance(node, (ast.For, ast.AsyncFor)):
            condition = node.iter
        else:
            continue
        condition_lines = {node.lineno} | _subtree_lines(condition)
        body_entry = node.body[0].lineno
        if body_entry in condition_lines:
            # Compound one-liner; line arcs cannot observe its outcomes.
            continue
        body_lines: Set[int] = set()
        for stmt in node.body:
            body_lines |= _subtree_lines(stmt)
        else_entry = node.orelse[0].lineno if node.orelse else None
        points.append(
            BranchPoint(
                frozenset(condition_lines),
                frozenset(body_lines),
                body_entry,
                else_entry,
            )
        )
    return points


def branch_outcomes(
    points: List[BranchPoint], arcs: Set[Tuple[int, int]]
) -> Tuple[int, int]:
    """(taken, total) decision outcomes over the observed arc set."""
    taken = 0
    total = 0
    for point in points:
        total += 2
        if any((u, point.body_entry) in arcs for u in point.condition_lines):
            taken += 1
        if point.else_entry is not None:
            if any((u, point.else_entry) in arcs for u in point.condition_lines):
                taken += 1
        else:
            if any(
                u in point.condition_lines
                and v not in point.body_lines
                and v not in point.condition_lines
                for (u, v) in arcs
            ):
                taken += 1
    return taken, total


class CoverageTracer:
    """Records executed lines and arcs for one target file."""

    def __init__(self, target_path: str):
        self.target = os.path.realpath(target_path)
        self.lines: Set[int] = set()
        self.arcs: Set[Tuple[int, int]] = set()
        self._prev: Dict[int, int] = {}
        self._is_target: Dict[str, bool] = {}

    def _matches(self, filename: str) -> bool:
        cached = self._is_target.get(filename)
        if cached is None:
            cached = os.path.realpath(filename) == self.target
            self._is_target[filename] = cached
        return cached

    def _local(self, frame, event, arg):
        key = id(frame)
        if event == "line":
            line = frame.f_lineno
            prev = self._prev.get(key)
            if prev is not None and prev != line:
                self.arcs.add((prev, line))
            self._prev[key] = line
            self.lines.add(line)
        elif event == "return":
            prev = self._prev.pop(key, None)
            if prev is not None:
                self.arcs.add((prev, EXIT))
        return self._local

    def _global(self, frame, event, arg):
        if event == "call" and self._matches(frame.f_code.co_filename):
            return self._local
        return None

    def install(self) -> None:
        threading.settrace(self._global)
        sys.settrace(self._global)

    def uninstall(self) -> None:
        sys.settrace(None)
        threading.settrace(None)  # type: ignore[arg-type]


def measure(source: str, tracer: CoverageTracer) -> Dict[str, float]:
    """Line and branch fractions for the traced implementation source."""
    statements = executable_lines(source)
    covered = tracer.lines & statements
    line_fraction = len(covered) / len(statements) if statements else 1.0
    taken, total = branch_outcomes(branch_points(source), tracer.arcs)
    branch_fraction = taken / total if total else 1.0
    return {"line": line_fraction, "branch": branch_fraction}
