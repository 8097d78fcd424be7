"""Declarative workflow documents and prompt assembly.

A workflow document is JSON of the shape::

    {
      "version": "1.0",
      "workflows": {
        "<workflow_id>": {
          "name": "...",
          "specification": "<task text>",
          "action_pairs": {            # "steps" is accepted as an alias
            "<node_id>": {
              "prompt": "... {placeholders} ...",
              "guard": "<registered guard type>",
              "requires": ["<node_id>", ...],     # optional
              "retry_limit": 3,                   # optional, per-node
              "bindings": {"test_code": "g_test"} # optional placeholder map
            }
          }
        }
      }
    }

Placeholders resolve to ``{specification}`` (the workflow task text), to
``{<dep>_artifact}`` for each required node, or to a custom name declared
in ``bindings``. The dependency graph over ``requires`` must be acyclic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

from .errors import SpecValidationError
from .state import Context, WorkflowState

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

# Types a document may reference out of the box. Registries may extend this.
DEFAULT_GUARD_TYPES = frozenset(
    {
        "syntax",
        "dynamic_test",
        "type",
        "architecture",
        "characterization",
        "coverage",
        "composite",
        "parallel",
        "human",
        "pre_commit",
        "command",
        "stub",
    }
)

FEEDBACK_HEADER = "Previous attempt failed:"
FEEDBACK_FOOTER = "Fix the implementation."
DEFAULT_FEEDBACK_BYTE_BUDGET = 16 * 1024


@dataclass(frozen=True)
class ActionPairSpec:
    """One node of the workflow DAG: a prompt template plus its guard."""

    node_id: str
    prompt: str
    guard_type: str
    requires: Tuple[str, ...] = ()
    retry_limit: Optional[int] = None
    bindings: Tuple[Tuple[str, str], ...] = ()

    def binding_map(self) -> Dict[str, str]:
        return dict(self.bindings)

    def placeholders(self) -> Set[str]:
        return set(PLACEHOLDER_RE.findall(self.prompt))


@dataclass(frozen=True)
class WorkflowSpec:
    """A validated workflow: ordered action pairs over an acyclic DAG."""

    workflow_id: str
    name: str
    specification: str
    action_pairs: Tuple[ActionPairSpec, ...]
    version: str = "1.0"

    def node_ids(self) -> Tuple[str, ...]:
        return tuple(n.node_id for n in self.action_pairs)

    def node(self, node_id: str) -> ActionPairSpec:
        for n in self.action_pairs:
            if n.node_id == node_id:
                return n
        raise SpecValidationError(f"unknown node id: {node_id!r}")

    def initial_state(self) -> WorkflowState:
        return WorkflowState(self.node_ids())


def _find_cycle(nodes: Sequence[ActionPairSpec]) -> Optional[List[str]]:
    requires = {n.node_id: list(n.requires) for n in nodes}
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in requires}
    stack: List[str] = []

    def visit(nid: str) -> Optional[List[str]]:
        color[nid] = GREY
        stack.append(nid)
        for dep in requires[nid]:
            if color[dep] == GREY:
                start = stack.index(dep)
                return stack[start:] + [dep]
            if color[dep] == WHITE:
                found = visit(dep)
                if found:
                    return found
        stack.pop()
        color[nid] = BLACK
        return None

    for nid in requires:
        if color[nid] == WHITE:
            found = visit(nid)
            if found:
                return found
    return None


def _validate(spec: WorkflowSpec, known_guard_types: Set[str]) -> None:
    ids = spec.node_ids()
    if len(set(ids)) != len(ids):
        raise SpecValidationError(f"duplicate node ids in workflow {spec.workflow_id!r}")
    id_set = set(ids)
    for node in spec.action_pairs:
        if node.guard_type not in known_guard_types:
            raise SpecValidationError(
                f"node {node.node_id!r}: unknown guard type {node.guard_type!r}"
            )
        for dep in node.requires:
            if dep not in id_set:
                raise SpecValidationError(
                    f"node {node.node_id!r}: requires unknown node {dep!r}"
                )
        if node.retry_limit is not None and node.retry_limit < 0:
            raise SpecValidationError(
                f"node {node.node_id!r}: retry_limit must be >= 0"
            )
        binding_map = node.binding_map()
        for placeholder, target in binding_map.items():
            if target not in node.requires:
                raise SpecValidationError(
                    f"node {node.node_id!r}: binding {placeholder!r} -> {target!r} "
                    f"does not name a required node"
                )
        allowed = {"specification"}
        allowed.update(f"{dep}_artifact" for dep in node.requires)
        allowed.update(binding_map)
        for placeholder in sorted(node.placeholders()):
            if placeholder not in allowed:
                raise SpecValidationError(
                    f"node {node.node_id!r}: unresolved placeholder {{{placeholder}}}"
                )
    cycle = _find_cycle(spec.action_pairs)
    if cycle:
        raise SpecValidationError(
            f"workflow {spec.workflow_id!r}: cyclic requires: {' -> '.join(cycle)}"
        )


def _parse_node(node_id: str, raw: Mapping) -> ActionPairSpec:
    if not isinstance(raw, Mapping):
        raise SpecValidationError(f"node {node_id!r}: expected an object")
    try:
        prompt = raw["prompt"]
        guard_type = raw["guard"]
    except KeyError as exc:
        raise SpecValidationError(f"node {node_id!r}: missing field {exc.args[0]!r}") from None
    requires = raw.get("requires", [])
    if not isinstance(requires, list):
        raise SpecValidationError(f"node {node_id!r}: requires must be a list")
    bindings = raw.get("bindings", {})
    if not isinstance(bindings, Mapping):
        raise SpecValidationError(f"node {node_id!r}: bindings must be an object")
    retry_limit = raw.get("retry_limit")
    if retry_limit is not None and not isinstance(retry_limit, int):
        raise SpecValidationError(f"node {node_id!r}: retry_limit must be an integer")
    return ActionPairSpec(
        node_id=node_id,
        prompt=str(prompt),
        guard_type=str(guard_type),
        requires=tuple(str(r) for r in requires),
        retry_limit=retry_limit,
        bindings=tuple((str(k), str(v)) for k, v in bindings.items()),
    )


def parse_document(
    text: str, known_guard_types: Optional[Set[str]] = None
) -> Dict[str, WorkflowSpec]:
    """Parse and validate every workflow in a JSON document."""
    known = set(known_guard_types) if known_guard_types is not None else set(DEFAULT_GUARD_TYPES)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecValidationError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, Mapping) or "workflows" not in raw:
        raise SpecValidationError("document must contain a 'workflows' object")
    version = str(raw.get("version", "1.0"))
    out: Dict[str, WorkflowSpec] = {}
    for wf_id, body in raw["workflows"].items():
        if not isinstance(body, Mapping):
            raise SpecValidationError(f"workflow {wf_id!r}: expected an object")
        pairs_raw = body.get("action_pairs", body.get("steps"))
        if not isinstance(pairs_raw, Mapping):
            raise SpecValidationError(
                f"workflow {wf_id!r}: missing 'action_pairs' (or 'steps') object"
            )
        nodes = tuple(_parse_node(nid, node_raw) for nid, node_raw in pairs_raw.items())
        spec = WorkflowSpec(
            workflow_id=str(wf_id),
            name=str(body.get("name", wf_id)),
            specification=str(body.get("specification", "")),
            action_pairs=nodes,
            version=version,
        )
        _validate(spec, known)
        out[spec.workflow_id] = spec
    if not out:
        raise SpecValidationError("document defines no workflows")
    return out


def parse(
    text: str,
    workflow_id: Optional[str] = None,
    known_guard_types: Optional[Set[str]] = None,
) -> WorkflowSpec:
    """Parse one workflow from a document; id may be omitted if unambiguous."""
    specs = parse_document(text, known_guard_types)
    if workflow_id is None:
        if len(specs) != 1:
            raise SpecValidationError(
                f"document defines {len(specs)} workflows; pass a workflow id "
                f"(one of: {', '.join(sorted(specs))})"
            )
        return next(iter(specs.values()))
    try:
        return specs[workflow_id]
    except KeyError:
        raise SpecValidationError(f"no workflow named {workflow_id!r} in document") from None


def ready_nodes(spec: WorkflowSpec, state: WorkflowState) -> List[str]:
    """Nodes whose guard is unmet and whose dependencies are all met.

    Deterministic: topological order with declaration order as tie-break.
    Ready nodes can never depend on each other (a ready dependency would
    already be satisfied), so the order reduces to declaration order.
    """
    domain = set(state.guards())
    if domain != set(spec.node_ids()):
        raise SpecValidationError("state domain does not match the workflow's guard set")
    out = []
    for node in spec.action_pairs:
        if state.verdict(node.node_id):
            continue
        if all(state.verdict(dep) for dep in node.requires):
            out.append(node.node_id)
    return out


def _render_template(template: str, bindings: Mapping[str, str]) -> str:
    def substitute(match: "re.Match[str]") -> str:
        name = match.group(1)
        if name not in bindings:
            raise SpecValidationError(f"unbound placeholder {{{name}}}")
        return bindings[name]

    return PLACEHOLDER_RE.sub(substitute, template)


def render_feedback_section(
    ctx: Context, byte_budget: int = DEFAULT_FEEDBACK_BYTE_BUDGET
) -> str:
    """Serialize the failure history, oldest first.

    When the section would exceed the byte budget, oldest entries are
    evicted first; the most recent entry is always kept even if it alone
    exceeds the budget.
    """
    blocks = [
        f"{FEEDBACK_HEADER}\n{feedback}\n{FEEDBACK_FOOTER}"
        for _, feedback in ctx.feedback
    ]
    while len(blocks) > 1 and len("\n\n".join(blocks).encode("utf-8")) > byte_budget:
        blocks.pop(0)
    return "\n\n".join(blocks)


def render_prompt(
    node: ActionPairSpec,
    bindings: Mapping[str, str],
    ctx: Context,
    byte_budget: int = DEFAULT_FEEDBACK_BYTE_BUDGET,
) -> str:
    """Assemble the full generation prompt for one attempt.

    Layout: global constraints, then the rendered template (task text plus
    injected dependency artifacts), then one block per accumulated failure.
    """
    parts: List[str] = []
    constraints = ctx.ambient.global_constraints
    if constraints:
        parts.append("\n".join(constraints))
    parts.append(_render_template(node.prompt, bindings))
    feedback_section = render_feedback_section(ctx, byte_budget)
    if feedback_section:
        parts.append(feedback_section)
    return "\n\n".join(parts)
