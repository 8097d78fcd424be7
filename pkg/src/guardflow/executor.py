"""The deterministic control loop.

A run repeatedly picks the first ready node, then loops per node:
render prompt, generate, sense with the node's guard, commit on pass or
fold the feedback back into the context on fail. Control state moves only
on a pass; a node that exhausts its retry budget fails the run, because
downstream nodes are unreachable.

Counting convention: ``r_max`` bounds *retries after the initial attempt*,
so a node makes at most ``r_max + 1`` generation attempts. Baseline mode
is the degenerate case ``r_max = 0`` with the guard still evaluated once
for scoring.

Every attempt is recorded twice over: appended to the artifact repository
(with its verdict) and to the execution trace. Trace export is JSONL, one
event per line with fields ``node_id, attempt, state_before, artifact_id,
verdict:{passed,feedback}, duration_ms``.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import (
    GenerationTransportError,
    GuardInfrastructureError,
    InfrastructureError,
)
from .generator import UNQUALIFIED_FEEDBACK, GenerationResult
from .guards import GuardRegistry
from .repository import ArtifactRecord, RepositoryLog
from .state import (
    AmbientEnvironment,
    Context,
    Verdict,
    WorkflowState,
    clear_feedback,
    refine_context,
    transition,
)
from .workflow import (
    DEFAULT_FEEDBACK_BYTE_BUDGET,
    ActionPairSpec,
    WorkflowSpec,
    ready_nodes,
    render_prompt,
)


class RunStatus(str, enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one run. Baseline mode forces a single attempt per node."""

    r_max: int = 3
    guard_timeout_seconds: float = 60.0
    mode: str = "guarded"
    feedback_byte_budget: int = DEFAULT_FEEDBACK_BYTE_BUDGET
    infra_retry_limit: int = 2

    def __post_init__(self):
        if self.r_max < 0:
            raise ValueError("r_max must be >= 0")
        if self.mode not in ("baseline", "guarded"):
            raise ValueError("mode must be 'baseline' or 'guarded'")

    def node_retry_limit(self, node: ActionPairSpec) -> int:
        if self.mode == "baseline":
            return 0
        if node.retry_limit is not None:
            return node.retry_limit
        return self.r_max


@dataclass(frozen=True)
class TraceEvent:
    """One generation attempt: control state before, artifact, verdict."""

    node_id: str
    attempt: int
    state_before: WorkflowState
    artifact_id: str
    verdict: Verdict
    duration_ms: float

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "node_id": self.node_id,
                "attempt": self.attempt,
                "state_before": self.state_before.as_dict(),
                "artifact_id": self.artifact_id,
                "verdict": {"passed": self.verdict.passed, "feedback": self.verdict.feedback},
                "duration_ms": self.duration_ms,
            },
            sort_keys=True,
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class RunOutcome:
    status: RunStatus
    final_state: WorkflowState
    trace: Tuple[TraceEvent, ...]
    attempts: int
    retries: int
    wall_ms: float


class InfrastructureAbort(InfrastructureError):
    """Run aborted by tooling failure; carries the partial trace."""

    def __init__(self, message: str, trace: Sequence[TraceEvent] = ()):
        super().__init__(message)
        self.trace = tuple(trace)


@dataclass
class _NodeResult:
    passed: bool
    record: Optional[ArtifactRecord]
    events: List[TraceEvent]
    context: Context


def _generate(generator, prompt: str, node_id: str, attempt: int, config: RunConfig) -> GenerationResult:
    last_error: Optional[Exception] = None
    for _ in range(config.infra_retry_limit + 1):
        try:
            return generator.generate(prompt, node_id=node_id, attempt=attempt)
        except GenerationTransportError as exc:
            last_error = exc
    raise InfrastructureAbort(f"generation transport failed: {last_error}")


def execute_node(
    node: ActionPairSpec,
    spec: WorkflowSpec,
    state: WorkflowState,
    ambient: AmbientEnvironment,
    generator,
    guard,
    config: RunConfig,
    repository: RepositoryLog,
    validated: Mapping[str, ArtifactRecord],
) -> _NodeResult:
    """Run one node's refinement loop to success or budget exhaustion."""
    ctx = Context(ambient=ambient, spec=spec.specification)
    bindings: Dict[str, str] = {"specification": spec.specification}
    deps: Dict[str, str] = {}
    for dep in node.requires:
        record = validated[dep]
        bindings[f"{dep}_artifact"] = record.content
        deps[dep] = record.content
    for placeholder, dep in node.binding_map().items():
        bindings[placeholder] = validated[dep].content
    dep_parents = [validated[dep].id for dep in node.requires]

    r_max = config.node_retry_limit(node)
    events: List[TraceEvent] = []
    prev_record: Optional[ArtifactRecord] = None
    for attempt in range(1, r_max + 2):
        started = time.monotonic()
        prompt = render_prompt(node, bindings, ctx, config.feedback_byte_budget)
        result = _generate(generator, prompt, node.node_id, attempt, config)
        parents = [prev_record.id] if prev_record is not None else dep_parents
        if not result.qualified:
            content = result.raw_response
            verdict = Verdict(False, UNQUALIFIED_FEEDBACK)
        else:
            content = result.extracted_code
            try:
                verdict = guard.evaluate(content, ctx, deps)
            except GuardInfrastructureError as exc:
                repository.append(content, parents, node.node_id, attempt, None)
                raise InfrastructureAbort(
                    f"guard {node.guard_type!r} on node {node.node_id!r} failed: {exc}",
                    events,
                ) from exc
        record = repository.append(content, parents, node.node_id, attempt, verdict)
        duration_ms = (time.monotonic() - started) * 1000.0
        events.append(
            TraceEvent(node.node_id, attempt, state, record.id, verdict, duration_ms)
        )
        if verdict.passed:
            return _NodeResult(True, record, events, clear_feedback(ctx))
        ctx = refine_context(ctx, record.id, verdict.feedback)
        prev_record = record
    return _NodeResult(False, prev_record, events, ctx)


def execute_workflow(
    spec: WorkflowSpec,
    registry: GuardRegistry,
    generator,
    repository: Optional[RepositoryLog] = None,
    config: Optional[RunConfig] = None,
    global_constraints: Sequence[str] = (),
    initial_state: Optional[WorkflowState] = None,
) -> RunOutcome:
    """Run a validated workflow to completion or first node failure.

    Termination is structural: each node makes at most ``r_max + 1``
    attempts, so a run makes at most ``sum(r_max + 1)`` attempts overall.
    Infrastructure failures raise :class:`InfrastructureAbort` with the
    partial trace preserved; they are never scored as workflow failure.
    """
    repository = repository if repository is not None else RepositoryLog()
    config = config if config is not None else RunConfig()
    state = initial_state if initial_state is not None else spec.initial_state()
    ambient = AmbientEnvironment(repository, tuple(global_constraints))
    validated: Dict[str, ArtifactRecord] = {}
    trace: List[TraceEvent] = []
    attempts = 0
    retries = 0
    started = time.monotonic()
    status = RunStatus.SUCCESS
    while True:
        ready = ready_nodes(spec, state)
        if not ready:
            status = RunStatus.SUCCESS if state.is_goal else RunStatus.FAILURE
            break
        node = spec.node(ready[0])
        guard = registry.resolve(node.guard_type)
        try:
            result = execute_node(
                node, spec, state, ambient, generator, guard, config, repository, validated
            )
        except InfrastructureAbort as abort:
            raise InfrastructureAbort(str(abort), tuple(trace) + abort.trace) from abort
        trace.extend(result.events)
        attempts += len(result.events)
        retries += len(result.events) - (1 if result.passed else 0)
        if not result.passed:
            status = RunStatus.FAILURE
            break
        validated[node.node_id] = result.record
        state = transition(state, node.node_id, True)
    wall_ms = (time.monotonic() - started) * 1000.0
    return RunOutcome(status, state, tuple(trace), attempts, retries, wall_ms)


def write_trace(trace: Sequence[TraceEvent], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in trace:
            fh.write(event.to_json_line())
            fh.write("\n")


@dataclass(frozen=True)
class ReplayedEvent:
    event: TraceEvent
    reproduced: Verdict
    matches: bool


@dataclass(frozen=True)
class ReplayReport:
    events: Tuple[ReplayedEvent, ...]
    ok: bool

    @property
    def mismatches(self) -> Tuple[ReplayedEvent, ...]:
        return tuple(e for e in self.events if not e.matches)


def replay(
    spec: WorkflowSpec,
    trace: Sequence[TraceEvent],
    repository: RepositoryLog,
    registry: GuardRegistry,
) -> ReplayReport:
    """Re-evaluate every deterministic guard on the recorded artifacts.

    Verdicts from nondeterministic guards (human review, unstable tools)
    and from unqualified-output events are reproduced from the record
    rather than re-evaluated. Dependency artifacts are resolved from the
    recorded passing attempt of each upstream node. A missing artifact
    raises; a tampered one shows up as a verdict mismatch.
    """
    passing_content: Dict[str, str] = {}
    for event in trace:
        if event.verdict.passed:
            passing_content[event.node_id] = repository.get(event.artifact_id).content
    replayed: List[ReplayedEvent] = []
    ambient = AmbientEnvironment(repository, ())
    for event in trace:
        record = repository.get(event.artifact_id)
        node = spec.node(event.node_id)
        guard = registry.resolve(node.guard_type)
        if not guard.deterministic or event.verdict.feedback == UNQUALIFIED_FEEDBACK:
            reproduced = event.verdict
        else:
            deps = {dep: passing_content[dep] for dep in node.requires if dep in passing_content}
            ctx = Context(ambient=ambient, spec=spec.specification)
            reproduced = guard.evaluate(record.content, ctx, deps)
        replayed.append(
            ReplayedEvent(event, reproduced, reproduced.passed == event.verdict.passed)
        )
    return ReplayReport(tuple(replayed), all(e.matches for e in replayed))
