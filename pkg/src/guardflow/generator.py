"""The stochastic generation boundary.

Three interchangeable generators sit behind one interface: a live client
for a local completion server, a scripted replay generator, and a
parameterized mock whose per-attempt success probability models a
generator of known capability. The engine only ever sees
:class:`GenerationResult` values, and every call is stateless: one
completion request, no server-side session.
"""

from __future__ import annotations

import hashlib
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .errors import GenerationTransportError, ScriptExhaustedError

MOCK_MODES = ("memoryless", "improving", "scripted")

PASS_MARKER = "# verdict: pass"
PASSING_SNIPPET = f'def solution():\n    return "ok"  {PASS_MARKER}\n'
FAILING_SNIPPET = 'def solution():\n    raise ValueError("not yet")\n'

UNQUALIFIED_FEEDBACK = "no code block in response"


@dataclass(frozen=True)
class GeneratorConfig:
    """Connection and sampling settings for a live completion endpoint.

    One unified system prompt is used for every model; the endpoint path
    and response field are configurable to match local model servers.
    """

    endpoint_url: str = "http://127.0.0.1:11434/api/generate"
    model_name: str = ""
    temperature: float = 0.7
    system_prompt: str = ""
    request_timeout: float = 120.0
    max_tokens: Optional[int] = None
    response_field: str = "response"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class GenerationResult:
    """One attempt's raw output plus the extracted, committable code."""

    raw_response: str
    extracted_code: Optional[str]
    latency_ms: float = 0.0
    token_counts: Optional[Mapping[str, int]] = None

    @property
    def qualified(self) -> bool:
        return self.extracted_code is not None


def extract_code(raw: str) -> Optional[str]:
    """Contents of the first fenced code block, fence lines stripped.

    The opening fence may carry a language tag; inner lines (including any
    nested backticks) are preserved verbatim. Returns None when no
    complete fenced block exists.
    """
    lines = raw.splitlines()
    open_idx = None
    for i, line in enumerate(lines):
        if line.strip().startswith("```"):
            open_idx = i
            break
    if open_idx is None:
        return None
    for j in range(open_idx + 1, len(lines)):
        if lines[j].strip().startswith("```"):
            return "\n".join(lines[open_idx + 1 : j])
    return None


def fence(code: str, language: str = "python") -> str:
    body = code if code.endswith("\n") else code + "\n"
    return f"```{language}\n{body}```"


class LiveGenerator:
    """Client for a local completion server.

    POSTs ``{model, prompt, system, temperature, stream: false}`` and reads
    the completion text from the configured response field. Transport
    failures raise :class:`GenerationTransportError`, which the executor
    retries on a separate budget without consuming guard retries.
    """

    def __init__(self, config: GeneratorConfig):
        self.config = config

    def generate(self, prompt: str, *, node_id: str = "", attempt: int = 1) -> GenerationResult:
        body = {
            "model": self.config.model_name,
            "prompt": prompt,
            "system": self.config.system_prompt,
            "temperature": self.config.temperature,
            "stream": False,
        }
        if self.config.max_tokens is not None:
            body["max_tokens"] = self.config.max_tokens
        request = urllib.request.Request(
            self.config.endpoint_url,
            data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        started = time.monotonic()
        try:
            with urllib.request.urlopen(request, timeout=self.config.request_timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError, ValueError) as exc:
            raise GenerationTransportError(f"completion request failed: {exc}") from exc
        latency_ms = (time.monotonic() - started) * 1000.0
        text = payload.get(self.config.response_field)
        if not isinstance(text, str):
            raise GenerationTransportError(
                f"response field {self.config.response_field!r} missing from payload"
            )
        tokens = None
        if "prompt_eval_count" in payload or "eval_count" in payload:
            tokens = {
                k: payload[src]
                for k, src in (("prompt", "prompt_eval_count"), ("completion", "eval_count"))
                if src in payload
            }
        return GenerationResult(text, extract_code(text), latency_ms, tokens)


ScriptType = Union[Sequence[str], Mapping[str, Sequence[str]]]


@dataclass(frozen=True)
class MockGeneratorSpec:
    """Configuration for the deterministic test double.

    memoryless: each attempt passes independently with probability epsilon.
    improving: retry k passes with probability min(1, epsilon + k * delta),
    modelling feedback actually helping.
    scripted: canned raw responses replayed per node and attempt.
    """

    mode: str = "memoryless"
    epsilon: float = 0.5
    improvement_delta: float = 0.0
    script: Optional[ScriptType] = None
    seed: int = 0
    passing_code: str = PASSING_SNIPPET
    failing_code: str = FAILING_SNIPPET

    def __post_init__(self):
        if self.mode not in MOCK_MODES:
            raise ValueError(f"mode must be one of {MOCK_MODES}")
        if self.mode in ("memoryless", "improving"):
            if not (0.0 < self.epsilon <= 1.0):
                raise ValueError("epsilon must lie in (0, 1]")
        if self.mode == "improving" and self.improvement_delta < 0:
            raise ValueError("improvement_delta must be >= 0")
        if self.mode == "scripted" and self.script is None:
            raise ValueError("scripted mode requires a script")


def _draw(seed: int, node_id: str, attempt: int) -> float:
    """Deterministic uniform draw in [0, 1) keyed by (seed, node, attempt)."""
    digest = hashlib.sha256(f"{seed}:{node_id}:{attempt}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class MockGenerator:
    """Reproducible generator double.

    Deterministic given (seed, node_id, attempt); draws are independent
    across attempts, so the memoryless mode is a true Bernoulli process.
    """

    def __init__(self, spec: MockGeneratorSpec):
        self.spec = spec
        script = spec.script
        if script is None:
            self._script: Optional[Mapping[str, Sequence[str]]] = None
        elif isinstance(script, Mapping):
            self._script = {k: tuple(v) for k, v in script.items()}
        else:
            self._script = {"": tuple(script)}

    def success_probability(self, attempt: int) -> float:
        retry_index = attempt - 1
        if self.spec.mode == "improving":
            return min(1.0, self.spec.epsilon + retry_index * self.spec.improvement_delta)
        return self.spec.epsilon

    def _scripted_raw(self, node_id: str, attempt: int) -> str:
        assert self._script is not None
        entries = self._script.get(node_id)
        if entries is None:
            entries = self._script.get("")
        if entries is None:
            raise ScriptExhaustedError(f"no script for node {node_id!r}")
        if attempt > len(entries):
            raise ScriptExhaustedError(
                f"script for node {node_id!r} exhausted at attempt {attempt}"
            )
        return entries[attempt - 1]

    def generate(self, prompt: str, *, node_id: str = "", attempt: int = 1) -> GenerationResult:
        if self.spec.mode == "scripted":
            raw = self._scripted_raw(node_id, attempt)
        else:
            passed = _draw(self.spec.seed, node_id, attempt) < self.success_probability(attempt)
            raw = fence(self.spec.passing_code if passed else self.spec.failing_code)
        return GenerationResult(raw, extract_code(raw))


def scripted_generator(script: ScriptType) -> MockGenerator:
    """Convenience constructor for a replay generator."""
    return MockGenerator(MockGeneratorSpec(mode="scripted", script=script))
