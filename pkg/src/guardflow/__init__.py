"""Guard-gated workflow engine.

Deterministic control flow over stochastic text generation: every
generative step is paired with a deterministic guard, output is committed
only when the guard passes, and guard feedback is folded back into the
generation context on failure.
"""

from .errors import (
    ArtifactNotFoundError,
    BoundViolationError,
    GenerationTransportError,
    GuardflowError,
    GuardInfrastructureError,
    InfrastructureError,
    ScriptExhaustedError,
    SpecValidationError,
    UnknownGuardError,
)
from .executor import (
    InfrastructureAbort,
    ReplayReport,
    RunConfig,
    RunOutcome,
    RunStatus,
    TraceEvent,
    execute_workflow,
    replay,
    write_trace,
)
from .generator import (
    GenerationResult,
    GeneratorConfig,
    LiveGenerator,
    MockGenerator,
    MockGeneratorSpec,
    extract_code,
    scripted_generator,
)
from .guards import (
    CharacterizationGuard,
    CompositeGuard,
    CoverageGuard,
    DynamicTestGuard,
    ExternalCommandGuard,
    GuardEvaluator,
    GuardRegistry,
    HumanGuard,
    ImportBoundaryGuard,
    ParallelGuard,
    PreCommitGuard,
    StubMarkerGuard,
    SubprocessShimClient,
    SyntaxGuard,
    default_registry,
)
from .repository import ArtifactRecord, RepositoryLog, compute_artifact_id
from .state import (
    AmbientEnvironment,
    Context,
    FeedbackHistory,
    Verdict,
    WorkflowState,
    clear_feedback,
    project,
    refine_context,
    transition,
)
from .workflow import (
    ActionPairSpec,
    WorkflowSpec,
    parse,
    parse_document,
    ready_nodes,
    render_prompt,
)

__version__ = "0.1.0"
