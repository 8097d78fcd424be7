"""Sandbox harness for guard-gated code generation.

One-shot worker: a single JSON request on stdin, a single JSON response on
stdout. Generated code never runs in the caller's process, nor in this
one: test execution happens in a child process with a hard wall-clock
kill, inside a throwaway temp directory.
"""

__version__ = "0.1.0"
