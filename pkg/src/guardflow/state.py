"""Control state and generation context.

The engine splits system state into two spaces: a deterministic control
state (a truth assignment over guard identifiers) and the generative
context that conditions the next attempt. Control state moves only when a
guard passes; guard failures leave it untouched and instead extend the
feedback history carried by the context.

All types here are immutable and all operations are pure, so values can be
shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Optional, Sequence, Tuple

from .errors import GuardInfrastructureError, UnknownGuardError

if TYPE_CHECKING:
    from .repository import RepositoryLog


@dataclass(frozen=True)
class Verdict:
    """Boolean guard outcome plus diagnostic feedback.

    Feedback is preserved verbatim from the tool that produced it; by
    convention passing verdicts carry an empty string.
    """

    passed: bool
    feedback: str = ""


class WorkflowState:
    """Total truth assignment over a workflow's guard identifiers.

    Immutable: updates return a new state. Within a run, verdicts only move
    from fail to pass (enforced by :func:`transition` being the sole
    mutator and never clearing a bit).
    """

    __slots__ = ("_assignment",)

    def __init__(self, assignment: Mapping[str, bool] | Iterable[str]):
        if isinstance(assignment, Mapping):
            mapping = dict(assignment)
        else:
            mapping = {gid: False for gid in assignment}
        for gid in mapping:
            if not gid:
                raise UnknownGuardError("guard identifiers must be non-empty")
        self._assignment = mapping

    def guards(self) -> Tuple[str, ...]:
        return tuple(self._assignment)

    def verdict(self, guard_id: str) -> bool:
        try:
            return self._assignment[guard_id]
        except KeyError:
            raise UnknownGuardError(f"unknown guard id: {guard_id!r}") from None

    def __contains__(self, guard_id: str) -> bool:
        return guard_id in self._assignment

    def with_passed(self, guard_id: str) -> "WorkflowState":
        if guard_id not in self._assignment:
            raise UnknownGuardError(f"unknown guard id: {guard_id!r}")
        updated = dict(self._assignment)
        updated[guard_id] = True
        return WorkflowState(updated)

    @property
    def passed_count(self) -> int:
        return sum(1 for v in self._assignment.values() if v)

    @property
    def is_goal(self) -> bool:
        return all(self._assignment.values())

    def as_dict(self) -> dict:
        return dict(self._assignment)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorkflowState):
            return NotImplemented
        return self._assignment == other._assignment

    def __repr__(self) -> str:
        bits = ", ".join(f"{g}={'T' if v else 'F'}" for g, v in self._assignment.items())
        return f"WorkflowState({bits})"


def transition(state: WorkflowState, guard_id: str, passed: bool) -> WorkflowState:
    """Advance the control state on a pass; leave it untouched on a fail.

    Raises UnknownGuardError for a guard outside the state's domain, which
    signals a mis-wired workflow rather than a generation failure.
    """
    if guard_id not in state:
        raise UnknownGuardError(f"unknown guard id: {guard_id!r}")
    if not passed:
        return state
    return state.with_passed(guard_id)


@dataclass(frozen=True)
class FeedbackHistory:
    """Ordered record of (artifact ref, feedback) pairs for one node.

    Append-only while the node is unresolved; cleared exactly when its
    guard passes.
    """

    entries: Tuple[Tuple[str, str], ...] = ()

    def append(self, artifact_ref: str, feedback: str) -> "FeedbackHistory":
        return FeedbackHistory(self.entries + ((artifact_ref, feedback),))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class AmbientEnvironment:
    """Read-only surroundings shared by every attempt of every node.

    Holds a view of the versioned artifact repository and the ordered
    global constraint strings that prefix every prompt. Nothing in this
    module mutates repository contents.
    """

    repository_view: Optional["RepositoryLog"] = None
    global_constraints: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Context:
    """Generator conditioning for one node: ambient + spec + failures.

    ``ambient`` and ``spec`` are invariant across retries of a node; only
    ``current_artifact`` and ``feedback`` evolve.
    """

    ambient: AmbientEnvironment = field(default_factory=AmbientEnvironment)
    spec: str = ""
    current_artifact: Optional[str] = None
    feedback: FeedbackHistory = field(default_factory=FeedbackHistory)


def refine_context(ctx: Context, artifact_ref: str, feedback: str) -> Context:
    """Fold a rejection into the context: extend history, track the artifact.

    Only failures refine, so empty feedback is rejected.
    """
    if not feedback:
        raise ValueError("refine_context requires non-empty feedback")
    return replace(
        ctx,
        current_artifact=artifact_ref,
        feedback=ctx.feedback.append(artifact_ref, feedback),
    )


def clear_feedback(ctx: Context) -> Context:
    """Drop the accumulated failure history; ambient and spec are untouched."""
    return replace(ctx, feedback=FeedbackHistory())


GuardFn = Callable[[str, Context], Verdict]


def project(
    artifact: str,
    ctx: Context,
    guards: Sequence[Tuple[str, GuardFn]],
) -> WorkflowState:
    """Evaluate every guard on a fixed (artifact, context) pair.

    The result is the observable control state induced by that artifact:
    deterministic, so repeated projection of the same inputs is identical.
    A crashing guard surfaces as an infrastructure error, never as a fail
    verdict.
    """
    assignment = {}
    for guard_id, evaluate in guards:
        try:
            verdict = evaluate(artifact, ctx)
        except GuardInfrastructureError:
            raise
        except Exception as exc:
            raise GuardInfrastructureError(
                f"guard {guard_id!r} crashed during projection: {exc}"
            ) from exc
        assignment[guard_id] = verdict.passed
    return WorkflowState(assignment)
