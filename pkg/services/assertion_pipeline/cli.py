"""
Command line front end: generate, evaluate, subsume, select and run
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError as SchemaError

from .artifacts import (
    load_candidates,
    load_examples,
    load_matrix,
    load_run_config,
    load_subsumption,
    save_candidates,
    save_matrix,
    save_selection,
    save_subsumption,
    write_json,
)
from .engine import build_result_matrix, metrics_table
from .errors import DimensionMismatchError, EmptyCandidateSetError, GatewayError, ParseError, PipelineError
from .gateway import GatewayConfig, LlmGateway
from .generate import choose_sample, generate_candidates
from .history import load_history
from .models import (
    ExampleSet,
    ResultMatrix,
    RunConfig,
    RunReport,
    SelectionConfig,
    SelectionMode,
    SelectionResult,
    SelectionStatus,
    SubsumptionSummary,
)
from .report import check_consistency, format_metrics, infeasibility_hint, mode_metrics, render_report
from .selection import select
from .subsume import build_subsumption_matrix

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_INFEASIBLE = 4
EXIT_TIME_LIMIT = 5

STATUS_EXIT = {
    SelectionStatus.OPTIMAL: EXIT_OK,
    SelectionStatus.INFEASIBLE: EXIT_INFEASIBLE,
    SelectionStatus.TIME_LIMIT: EXIT_TIME_LIMIT,
}


def _gateway(gateway: Optional[LlmGateway], config: Optional[RunConfig] = None) -> LlmGateway:
    if gateway is not None:
        return gateway
    overrides = {}
    if config is not None:
        overrides = {"mode": config.gateway_mode, "cache_dir": config.cache_dir}
    return LlmGateway(GatewayConfig.from_env(**overrides))


def labels_for(matrix: ResultMatrix, examples: ExampleSet) -> List[int]:
    """Labels in the matrix's row order"""
    by_id = {e.id: int(e.label) for e in examples.examples}
    missing = [i for i in matrix.example_ids if i not in by_id]
    if missing:
        raise DimensionMismatchError(f"examples file lacks matrix rows: {', '.join(missing[:5])}")
    return [by_id[i] for i in matrix.example_ids]


def _print_selection(result: SelectionResult) -> None:
    print(format_metrics(mode_metrics(result)))
    if result.selected_ids:
        print("Selected: " + ", ".join(result.selected_ids))
    if result.status == SelectionStatus.INFEASIBLE:
        print(infeasibility_hint(result))
    elif result.status == SelectionStatus.TIME_LIMIT:
        print("Solver time limit reached; the selection may not be optimal.")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace, gateway: Optional[LlmGateway] = None) -> int:
    history = load_history(args.history)
    examples = load_examples(args.examples)
    candidates = generate_candidates(
        history, choose_sample(examples), _gateway(gateway), workers=args.workers
    )
    save_candidates(args.out, candidates)

    print(f"Wrote {len(candidates.candidates)} candidates to {args.out}")
    for category, count in candidates.category_tally().items():
        print(f"  {category:<22} {count}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, gateway: Optional[LlmGateway] = None) -> int:
    candidates = load_candidates(args.candidates)
    examples = load_examples(args.examples)
    matrix = build_result_matrix(
        candidates, examples, _gateway(gateway), workers=args.workers, progress=True
    )
    save_matrix(args.out, matrix)

    print(f"Wrote {len(matrix.example_ids)} x {len(matrix.assertion_ids)} result matrix to {args.out}")
    for row in metrics_table(matrix, examples.labels):
        print(f"  {row['assertion_id']:<40} FFR {row['single_ffr']:.3f}  caught {row['failures_caught']}")
    return EXIT_OK


def cmd_subsume(args: argparse.Namespace, gateway: Optional[LlmGateway] = None) -> int:
    candidates = load_candidates(args.candidates)
    matrix = load_matrix(args.matrix)
    labels = labels_for(matrix, load_examples(args.examples))
    summary = SubsumptionSummary()
    K = build_subsumption_matrix(
        candidates, matrix, labels, args.tau,
        None if args.no_llm else _gateway(gateway),
        summary,
    )
    save_subsumption(args.out, K)

    print(f"Wrote {len(K.assertion_ids)} x {len(K.assertion_ids)} subsumption matrix to {args.out}")
    for provenance, count in summary.provenance_counts.items():
        print(f"  {provenance:<11} {count}")
    for refutation in summary.refutations:
        print(f"  refuted {refutation.subsumer} -> {refutation.subsumed} "
              f"(example {refutation.witness_example_id})")
    if summary.llm_status not in ("ok", "disabled", "skipped"):
        print(f"Warning: LLM subsumption {summary.llm_status}; K holds DSL rules only", file=sys.stderr)
    return EXIT_OK


def cmd_select(args: argparse.Namespace, gateway: Optional[LlmGateway] = None) -> int:
    config = SelectionConfig(alpha=args.alpha, tau=args.tau, mode=args.mode, time_limit=args.time_limit)
    if config.mode in (SelectionMode.SUB, SelectionMode.NO_EXAMPLES) and not args.subsumption:
        raise ParseError(f"--subsumption is required in {config.mode.value} mode")

    K = load_subsumption(args.subsumption) if args.subsumption else None
    matrix = labels = None
    if config.mode != SelectionMode.NO_EXAMPLES:
        if not args.matrix or not args.examples:
            raise ParseError(f"--matrix and --examples are required in {config.mode.value} mode")
        matrix = load_matrix(args.matrix)
        labels = labels_for(matrix, load_examples(args.examples))

    result = select(matrix, labels, config, K)
    save_selection(args.out, result)
    _print_selection(result)
    return STATUS_EXIT[result.status]


def cmd_run(args: argparse.Namespace, gateway: Optional[LlmGateway] = None) -> int:
    config = load_run_config(args.config)
    if args.workers is not None:
        config = config.model_copy(update={"workers": args.workers})
    for path in (config.history, config.examples):
        if not Path(path).exists():
            raise ParseError(f"File not found: {path}")
    examples = load_examples(config.examples)
    config.out_dir.mkdir(parents=True, exist_ok=True)

    report = RunReport()
    llm = None

    def timed(stage: str, fn: Callable[[], None]) -> None:
        start = time.perf_counter()
        fn()
        report.stage_timings[stage] = round(time.perf_counter() - start, 3)

    candidates_path = config.artifact("candidates")
    if candidates_path.exists():
        report.skipped_stages.append("generate")
    else:
        history = load_history(config.history)
        llm = _gateway(gateway, config)

        def generate() -> None:
            candidates = generate_candidates(
                history, choose_sample(examples), llm, config.workers, report.generation
            )
            save_candidates(candidates_path, candidates)
        timed("generate", generate)
    candidates = load_candidates(candidates_path)

    matrix_path = config.artifact("matrix")
    if matrix_path.exists():
        report.skipped_stages.append("evaluate")
    else:
        llm = llm or _gateway(gateway, config)

        def evaluate() -> None:
            matrix = build_result_matrix(
                candidates, examples, llm, config.workers, report.evaluation_errors, progress=True
            )
            save_matrix(matrix_path, matrix)
        timed("evaluate", evaluate)
    matrix = load_matrix(matrix_path)
    labels = labels_for(matrix, examples)

    K_path = config.artifact("subsumption")
    if K_path.exists():
        report.skipped_stages.append("subsume")
    else:
        judge = None
        if config.use_llm_subsumption:
            judge = llm or _gateway(gateway, config)

        def subsume() -> None:
            K = build_subsumption_matrix(
                candidates, matrix, labels, config.selection.tau, judge, report.subsumption
            )
            save_subsumption(K_path, K)
        timed("subsume", subsume)
    K = load_subsumption(K_path)

    results: Dict[SelectionMode, SelectionResult] = {}

    def solve() -> None:
        for mode in [config.selection.mode] + [m for m in config.report_modes if m != config.selection.mode]:
            results[mode] = select(matrix, labels, config.selection.model_copy(update={"mode": mode}), K)
    timed("select", solve)

    primary = results[config.selection.mode]
    save_selection(config.artifact("selection"), primary)

    reported = [results[m] for m in config.report_modes]
    report.metrics = [mode_metrics(r) for r in reported]
    check_consistency(report, reported, matrix, labels, K)
    write_json(config.artifact("report"), report.model_dump(mode="json"))

    print(render_report(report))
    if primary.status == SelectionStatus.INFEASIBLE:
        print(infeasibility_hint(primary))
    return STATUS_EXIT[primary.status]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    common.add_argument("--workers", type=int, default=None, help="threads per stage")

    parser = argparse.ArgumentParser(
        prog="spade",
        description="Generate candidate assertions from prompt history and select a minimal accurate set",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="prompt deltas -> candidate assertions")
    p.add_argument("--history", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="candidates x examples -> result matrix")
    p.add_argument("--candidates", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("subsume", parents=[common], help="build the subsumption matrix")
    p.add_argument("--candidates", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--no-llm", action="store_true", help="DSL rules only")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsume)

    p = sub.add_parser("select", parents=[common], help="choose the assertion set")
    p.add_argument("--matrix")
    p.add_argument("--examples")
    p.add_argument("--subsumption")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--mode", choices=[m.value for m in SelectionMode], default=SelectionMode.SUB.value)
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("run", parents=[common], help="end-to-end run from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[Sequence[str]] = None, gateway: Optional[LlmGateway] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command != "run" and args.workers is None:
        args.workers = 4

    try:
        return args.func(args, gateway)
    except EmptyCandidateSetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except (SchemaError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (GatewayError, PipelineError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
