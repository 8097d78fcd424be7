"""Operator command line.

Subcommands: ``validate`` a workflow document, ``run`` one workflow (live
endpoint, mock, or scripted generator), ``benchmark`` a campaign of
baseline-vs-guarded trials, and ``verify`` a repository log's hash chain.

Exit codes: 0 success, 1 workflow failure (or failed verification),
2 validation error, 3 infrastructure abort.

Environment: ``GUARDFLOW_ENDPOINT`` and ``GUARDFLOW_MODEL`` override the
endpoint and model flags; ``GUARDFLOW_SHIM_CMD`` overrides the sandbox
harness command.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import shlex
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import analysis
from .errors import GuardflowError, InfrastructureError, SpecValidationError
from .executor import InfrastructureAbort, RunConfig, RunOutcome, RunStatus, execute_workflow, write_trace
from .generator import GeneratorConfig, LiveGenerator, MockGenerator, MockGeneratorSpec
from .guards import default_registry
from .repository import RepositoryLog
from .workflow import DEFAULT_GUARD_TYPES, WorkflowSpec, parse, parse_document

EXIT_OK = 0
EXIT_WORKFLOW_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_INFRASTRUCTURE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guardflow",
        description="Guard-gated workflow engine for stochastic code generators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate a workflow document")
    p_validate.add_argument("spec", help="path to the workflow JSON document")
    p_validate.add_argument("--workflow", default=None, help="workflow id to check")

    p_run = sub.add_parser("run", help="execute one workflow")
    p_run.add_argument("spec")
    p_run.add_argument("--workflow", default=None)
    p_run.add_argument("--mode", choices=("baseline", "guarded"), default="guarded")
    p_run.add_argument("--r-max", type=int, default=3, help="retries after the initial attempt")
    p_run.add_argument("--generator", choices=("live", "mock", "scripted"), default="live")
    p_run.add_argument("--endpoint", default=None)
    p_run.add_argument("--model", default=None)
    p_run.add_argument("--temperature", type=float, default=0.7)
    p_run.add_argument("--timeout", type=float, default=60.0, help="guard timeout seconds")
    p_run.add_argument("--epsilon", type=float, default=0.5, help="mock success probability")
    p_run.add_argument("--improvement-delta", type=float, default=0.0)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--script", default=None, help="JSON file of canned outputs per node")
    p_run.add_argument("--constraint", action="append", default=[], help="global constraint line")
    p_run.add_argument("--out", default=None, help="directory for trace and repository logs")
    p_run.add_argument("--shim-cmd", default=None, help="sandbox harness command")

    p_bench = sub.add_parser("benchmark", help="run a baseline-vs-guarded campaign")
    p_bench.add_argument("spec")
    p_bench.add_argument("--workflow", action="append", default=None, help="workflow id (repeatable)")
    p_bench.add_argument("--trials", type=int, default=50)
    p_bench.add_argument("--modes", default="baseline,guarded")
    p_bench.add_argument("--r-max", type=int, default=3)
    p_bench.add_argument("--generator", choices=("live", "mock"), default="mock")
    p_bench.add_argument("--endpoint", default=None)
    p_bench.add_argument("--model", default=None)
    p_bench.add_argument("--temperature", type=float, default=0.7)
    p_bench.add_argument("--timeout", type=float, default=60.0)
    p_bench.add_argument("--epsilon", type=float, default=0.5)
    p_bench.add_argument("--improvement-delta", type=float, default=0.0)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--shim-cmd", default=None)

    p_verify = sub.add_parser("verify", help="verify a repository log's hash chain")
    p_verify.add_argument("log", help="path to a repository JSONL log")

    return parser


def _load_document(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecValidationError(f"cannot read {path}: {exc}") from exc


def _endpoint_and_model(args) -> tuple:
    endpoint = os.environ.get("GUARDFLOW_ENDPOINT") or args.endpoint
    model = os.environ.get("GUARDFLOW_MODEL") or args.model
    return endpoint, model


def _make_generator(args, seed: Optional[int] = None):
    if args.generator == "scripted":
        if not args.script:
            raise SpecValidationError("--generator scripted requires --script FILE")
        script = json.loads(Path(args.script).read_text(encoding="utf-8"))
        return MockGenerator(MockGeneratorSpec(mode="scripted", script=script))
    if args.generator == "mock":
        mode = "improving" if args.improvement_delta > 0 else "memoryless"
        return MockGenerator(
            MockGeneratorSpec(
                mode=mode,
                epsilon=args.epsilon,
                improvement_delta=args.improvement_delta,
                seed=seed if seed is not None else args.seed,
            )
        )
    endpoint, model = _endpoint_and_model(args)
    config = GeneratorConfig(
        endpoint_url=endpoint or GeneratorConfig.endpoint_url,
        model_name=model or "",
        temperature=args.temperature,
    )
    return LiveGenerator(config)


def _registry(args):
    shim_cmd = shlex.split(args.shim_cmd) if getattr(args, "shim_cmd", None) else None
    return default_registry(shim_command=shim_cmd, guard_timeout=getattr(args, "timeout", 60.0))


def cmd_validate(args) -> int:
    document = _load_document(args.spec)
    specs = parse_document(document)
    if args.workflow is not None and args.workflow not in specs:
        raise SpecValidationError(f"no workflow named {args.workflow!r} in document")
    names = ", ".join(sorted(specs))
    print(f"OK: {len(specs)} workflow(s) valid: {names}")
    return EXIT_OK


def _print_run_summary(spec: WorkflowSpec, outcome: RunOutcome) -> None:
    per_node: Dict[str, List] = {}
    for event in outcome.trace:
        per_node.setdefault(event.node_id, []).append(event)
    print("Step | Attempts | Guard Result | Duration")
    for node_id, events in per_node.items():
        final = events[-1].verdict
        duration_s = sum(e.duration_ms for e in events) / 1000.0
        verdict = "PASS" if final.passed else "FAIL"
        print(f"{node_id} | {len(events)} | {verdict} | {duration_s:.2f}s")
    print()
    print(f"Total retries: {outcome.retries}")
    print(f"Total duration: {outcome.wall_ms / 1000.0:.2f}s")
    state = "COMPLETE" if outcome.status is RunStatus.SUCCESS else "FAILED"
    print(f"Workflow state: {state}")


def cmd_run(args) -> int:
    document = _load_document(args.spec)
    spec = parse(document, args.workflow)
    registry = _registry(args)
    generator = _make_generator(args)
    repository = RepositoryLog()
    config = RunConfig(r_max=args.r_max, guard_timeout_seconds=args.timeout, mode=args.mode)
    outcome = execute_workflow(
        spec, registry, generator, repository, config, tuple(args.constraint)
    )
    _print_run_summary(spec, outcome)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        repository.save(str(out / "repository.jsonl"))
        write_trace(outcome.trace, str(out / "trace.jsonl"))
    return EXIT_OK if outcome.status is RunStatus.SUCCESS else EXIT_WORKFLOW_FAILURE


def _trial_seed(seed: int, workflow_id: str, mode: str, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{workflow_id}:{mode}:{index}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


def _summary_payload(summary: analysis.TrialSummary) -> Dict:
    return {
        "task_id": summary.task_id,
        "model_id": summary.model_id,
        "mode": summary.mode,
        "successes": summary.successes,
        "trials": summary.trials,
        "success_rate": summary.success_rate,
        "avg_attempts": summary.avg_attempts,
        "avg_retries": summary.avg_retries,
    }


def _run_benchmark_cell(
    args,
    spec: WorkflowSpec,
    mode: str,
    cell_dir: Path,
    model_label: str,
) -> analysis.TrialSummary:
    """Run one (workflow, mode) cell; resumable via its summary file."""
    summary_path = cell_dir / "summary.json"
    if summary_path.exists():
        raw = json.loads(summary_path.read_text(encoding="utf-8"))
        return analysis.TrialSummary(
            task_id=raw["task_id"],
            model_id=raw["model_id"],
            mode=raw["mode"],
            successes=raw["successes"],
            trials=raw["trials"],
            avg_attempts=raw["avg_attempts"],
            avg_retries=raw["avg_retries"],
            wall_ms=raw.get("wall_ms", 0.0),
        )
    cell_dir.mkdir(parents=True, exist_ok=True)
    config = RunConfig(r_max=args.r_max, guard_timeout_seconds=args.timeout, mode=mode)
    interactive = any(n.guard_type == "human" for n in spec.action_pairs)
    jobs = 1 if interactive else max(1, args.jobs)

    def run_trial(index: int) -> RunOutcome:
        registry = _registry(args)
        if args.generator == "mock":
            generator = _make_generator(args, seed=_trial_seed(args.seed, spec.workflow_id, mode, index))
        else:
            generator = _make_generator(args)
        repository = RepositoryLog()
        outcome = execute_workflow(spec, registry, generator, repository, config)
        repository.save(str(cell_dir / f"trial_{index:04d}.repo.jsonl"))
        write_trace(outcome.trace, str(cell_dir / f"trial_{index:04d}.trace.jsonl"))
        return outcome

    outcomes: List[Optional[RunOutcome]] = [None] * args.trials
    if jobs == 1:
        for i in range(args.trials):
            outcomes[i] = run_trial(i)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(run_trial, i): i for i in range(args.trials)}
            for future in concurrent.futures.as_completed(futures):
                outcomes[futures[future]] = future.result()
    summary = analysis.summarize(outcomes, spec.workflow_id, model_label, mode)
    payload = _summary_payload(summary)
    payload["wall_ms"] = summary.wall_ms
    summary_path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return summary


def cmd_benchmark(args) -> int:
    if args.trials < 1:
        raise SpecValidationError("--trials must be >= 1")
    document = _load_document(args.spec)
    all_specs = parse_document(document)
    workflow_ids = args.workflow or sorted(all_specs)
    for wf_id in workflow_ids:
        if wf_id not in all_specs:
            raise SpecValidationError(f"no workflow named {wf_id!r} in document")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in ("baseline", "guarded"):
            raise SpecValidationError(f"unknown mode {mode!r}")
    _, model = _endpoint_and_model(args)
    model_label = model or (f"mock(eps={args.epsilon})" if args.generator == "mock" else "live")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells: Dict[str, Dict[str, analysis.TrialSummary]] = {}
    for wf_id in workflow_ids:
        spec = all_specs[wf_id]
        cells[wf_id] = {}
        for mode in modes:
            cell_dir = out / "cells" / f"{wf_id}__{mode}"
            cells[wf_id][mode] = _run_benchmark_cell(args, spec, mode, cell_dir, model_label)

    report: Dict = {
        "campaign": {
            "generator": args.generator,
            "epsilon": args.epsilon if args.generator == "mock" else None,
            "improvement_delta": args.improvement_delta if args.generator == "mock" else None,
            "model": model_label,
            "modes": modes,
            "r_max": args.r_max,
            "seed": args.seed,
            "trials": args.trials,
            "workflows": list(workflow_ids),
        },
        "cells": {
            wf_id: {mode: _summary_payload(s) for mode, s in by_mode.items()}
            for wf_id, by_mode in cells.items()
        },
        "comparisons": {},
    }
    table_rows = []
    for wf_id, by_mode in cells.items():
        if "baseline" in by_mode and "guarded" in by_mode:
            stats = analysis.compare(by_mode["baseline"], by_mode["guarded"])
            report["comparisons"][wf_id] = {
                "gain_pp": stats.gain_pp,
                "fisher_p": stats.fisher_p,
                "cohens_h": stats.cohens_h,
                "cost_multiplier": stats.cost_multiplier,
                "gain_per_multiplier": stats.gain_per_multiplier,
            }
            table_rows.append(
                {
                    "model": f"{model_label} [{wf_id}]",
                    "base_rate": by_mode["baseline"].success_rate,
                    "guarded_rate": by_mode["guarded"].success_rate,
                    "gain_pp": stats.gain_pp,
                    "fisher_p": stats.fisher_p,
                    "avg_retries": by_mode["guarded"].avg_retries,
                }
            )
    report_json = json.dumps(report, sort_keys=True, indent=2) + "\n"
    (out / "report.json").write_text(report_json, encoding="utf-8")
    table = analysis.render_report_table(table_rows) if table_rows else "(no comparison cells)"
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    manifest = {
        "completed_cells": [
            f"{wf_id}__{mode}" for wf_id, by_mode in cells.items() for mode in by_mode
        ],
        "wall_ms": {
            f"{wf_id}__{mode}": by_mode[mode].wall_ms
            for wf_id, by_mode in cells.items()
            for mode in by_mode
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(table)
    print(f"\nreport written to {out / 'report.json'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        log = RepositoryLog.load(args.log)
    except OSError as exc:
        print(f"cannot read {args.log}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError) as exc:
        print(f"malformed log {args.log}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if log.verify_chain():
        print(f"OK: {len(log)} record(s), chain verified")
        return EXIT_OK
    print(f"FAILED: {args.log} does not verify (tampered content or broken edges)", file=sys.stderr)
    return EXIT_WORKFLOW_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "validate": cmd_validate,
        "run": cmd_run,
        "benchmark": cmd_benchmark,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except SpecValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InfrastructureAbort, InfrastructureError) as exc:
        print(f"infrastructure abort: {exc}", file=sys.stderr)
        return EXIT_INFRASTRUCTURE
    except GuardflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
