"""Exception hierarchy.

Two failure channels are kept strictly apart throughout the engine:

* a guard verdict of "fail" is a normal, expected outcome that consumes a
  retry and feeds the refinement loop;
* an *infrastructure* error (sandbox missing, endpoint unreachable, tool
  crash) aborts the run and must never be scored as a rejection.
"""


class GuardflowError(Exception):
    """Base class for all engine errors."""


class UnknownGuardError(GuardflowError):
    """A guard identifier is not part of the workflow's guard set."""


class SpecValidationError(GuardflowError):
    """A workflow document failed parsing or validation."""


class ArtifactNotFoundError(GuardflowError):
    """A repository lookup referenced an id that was never appended."""


class InfrastructureError(GuardflowError):
    """Tooling failure, distinct from an artifact being judged invalid."""


class GuardInfrastructureError(InfrastructureError):
    """A guard could not be evaluated (sandbox/tool unavailable or crashed)."""


class GenerationTransportError(InfrastructureError):
    """The generator endpoint failed at the transport level."""


class ScriptExhaustedError(GuardflowError):
    """A scripted generator ran out of canned outputs."""


class BoundViolationError(GuardflowError):
    """A Monte Carlo validation run exceeded its analytic bound."""
