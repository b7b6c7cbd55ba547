"""Command-line pipeline: check, explore, profile, stats, induce, policy, graph.

Each pipeline stage reads and writes files in a run directory (``--out``):

* explore  -> trajectories.jsonl
* profile  -> profile.csv           (requires trajectories.jsonl)
* stats    -> stats.csv             (requires trajectories.jsonl, profile.csv)
* induce   -> hypothesis.json/.txt  (requires trajectories.jsonl, profile.csv)
* policy   -> policy_report.json    (requires trajectories.jsonl, hypothesis.json)
* graph    -> scheme.dot, scheme_edges.csv (requires hypothesis.json)

Every stage records itself in the single manifest.json of the run directory.
Exit codes: 0 success, 1 validation or usage error, 2 IO error, 3 stage-order
violation (a prerequisite stage's output is missing).
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, corpus_path
from .analytics import (
    detect_segments,
    frequency_table,
    read_profile_csv,
    utility_profile,
    write_profile_csv,
    write_stats_csv,
)
from .dsl import parse_ruleset, parse_scenario
from .explorer import ExplorerError, SearchParams, explore, read_jsonl, write_jsonl
from .induction import (
    InductionConfig,
    InductionError,
    build_background,
    evaluate,
    induce,
    label,
    read_hypothesis_json,
    scheme_graph,
    write_dot,
    write_edges_csv,
    write_hypothesis_json,
    write_hypothesis_text,
)
from .policy import PolicyError, WelfareConfig, delta_restriction, write_policy_report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_STAGE_ORDER = 3

TRAJECTORIES_FILE = "trajectories.jsonl"
PROFILE_FILE = "profile.csv"
STATS_FILE = "stats.csv"
HYPOTHESIS_JSON = "hypothesis.json"
HYPOTHESIS_TEXT = "hypothesis.txt"
POLICY_FILE = "policy_report.json"
DOT_FILE = "scheme.dot"
EDGES_FILE = "scheme_edges.csv"
MANIFEST_FILE = "manifest.json"

_WELFARE_ALIASES = {
    "mean_tax": "mean_tax_collected",
    "total_tax": "total_tax_collected",
    "mean_tax_collected": "mean_tax_collected",
    "total_tax_collected": "total_tax_collected",
    "mean_utilitarian": "mean_utilitarian",
}


class CliError(Exception):
    def __init__(self, message: str, exit_code: int) -> None:
        super().__init__(message)
        self.exit_code = exit_code


class _ArgumentParser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this tool reserves 2 for IO."""

    def error(self, message: str):  # noqa: A003 - argparse API
        raise CliError(f"{self.prog}: {message}", EXIT_VALIDATION)


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc


def _require_stage_file(out_dir: Path, name: str, producer: str) -> Path:
    path = out_dir / name
    if not path.exists():
        raise CliError(
            f"{path} not found; run the {producer} stage first", EXIT_STAGE_ORDER
        )
    return path


def _parse_documents(ruleset_path: Path, scenario_path: Path):
    ruleset_result = parse_ruleset(_read_text(ruleset_path))
    scenario_result = parse_scenario(_read_text(scenario_path))
    diagnostics = list(ruleset_result.diagnostics) + list(scenario_result.diagnostics)
    for diagnostic in diagnostics:
        print(str(diagnostic), file=sys.stderr)
    if not ruleset_result.ok or not scenario_result.ok:
        raise CliError("input documents failed validation", EXIT_VALIDATION)
    return ruleset_result.document, scenario_result.document


def _update_manifest(
    out_dir: Path,
    stage: str,
    record: dict,
    hashes: Optional[dict] = None,
) -> None:
    path = out_dir / MANIFEST_FILE
    manifest: dict = {
        "format": 1,
        "tool": "loophound",
        "version": __version__,
        "stages": {},
    }
    if path.exists():
        try:
            with open(path, "r", encoding="utf-8") as handle:
                manifest = json.load(handle)
        except (OSError, ValueError):
            pass
        manifest.setdefault("stages", {})
        manifest["version"] = __version__
    if hashes:
        manifest.update(hashes)
    record = dict(record)
    record["completed_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    manifest["stages"][stage] = record
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, sort_keys=True, indent=2)
            handle.write("\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _ensure_out_dir(raw: str) -> Path:
    out_dir = Path(raw)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out_dir}: {exc}", EXIT_IO) from exc
    return out_dir


def _load_trajectories(out_dir: Path):
    path = _require_stage_file(out_dir, TRAJECTORIES_FILE, "explore")
    try:
        return read_jsonl(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"corrupt trajectory file {path}: {exc}", EXIT_VALIDATION) from exc


def _load_profile(out_dir: Path):
    path = _require_stage_file(out_dir, PROFILE_FILE, "profile")
    try:
        return read_profile_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(f"corrupt profile file {path}: {exc}", EXIT_VALIDATION) from exc


def _load_hypothesis(out_dir: Path):
    path = _require_stage_file(out_dir, HYPOTHESIS_JSON, "induce")
    try:
        return read_hypothesis_json(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError, InductionError) as exc:
        raise CliError(f"corrupt hypothesis file {path}: {exc}", EXIT_VALIDATION) from exc


# ============================================================================
# Commands
# ============================================================================


def cmd_check(args: argparse.Namespace) -> int:
    _parse_documents(Path(args.ruleset), Path(args.state))
    print("ok: ruleset and state parse and validate")
    return EXIT_OK


def cmd_explore(args: argparse.Namespace) -> int:
    try:
        params = SearchParams(
            seed=args.seed,
            iterations=args.iterations,
            expansions=args.expansions,
            beta=args.beta,
            tau0=args.tau0,
            max_steps=args.max_steps,
            cost_coefficient=args.cost,
            threads=args.threads,
        )
    except ExplorerError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    ruleset_path = Path(args.ruleset)
    scenario_path = Path(args.scenario)
    ruleset, scenario = _parse_documents(ruleset_path, scenario_path)
    out_dir = _ensure_out_dir(args.out)
    tset = explore(ruleset, scenario, params)
    try:
        write_jsonl(tset, out_dir / TRAJECTORIES_FILE)
    except OSError as exc:
        raise CliError(f"cannot write trajectories: {exc}", EXIT_IO) from exc
    for warning in tset.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    complete = sum(1 for t in tset.trajectories if t.complete)
    print(
        f"explored {len(tset.trajectories)} trajectories "
        f"({complete} complete) -> {out_dir / TRAJECTORIES_FILE}"
    )
    _update_manifest(
        out_dir,
        "explore",
        {
            "command": "explore",
            "config_paths": {
                "ruleset": str(ruleset_path),
                "scenario": str(scenario_path),
            },
            "seed": params.seed,
            "iterations": params.iterations,
            "expansions": params.expansions,
            "beta": params.beta,
            "tau0": params.tau0,
            "max_steps": params.max_steps,
            "cost": params.cost_coefficient,
            "threads": params.threads,
        },
        hashes={
            "ruleset_sha256": tset.ruleset_sha256,
            "scenario_sha256": tset.scenario_sha256,
        },
    )
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    if args.min_distance < 1:
        raise CliError("--min-distance must be at least 1", EXIT_VALIDATION)
    if args.peak_height is not None and args.peak_height <= 0:
        raise CliError("--peak-height must be positive", EXIT_VALIDATION)
    out_dir = _ensure_out_dir(args.out)
    tset = _load_trajectories(out_dir)
    profile = utility_profile(tset)
    if len(profile.values) == 0:
        raise CliError("no complete trajectories; cannot build a profile", EXIT_VALIDATION)
    segments = detect_segments(profile, args.peak_height, args.min_distance)
    try:
        write_profile_csv(out_dir / PROFILE_FILE, profile, segments)
    except OSError as exc:
        raise CliError(f"cannot write profile: {exc}", EXIT_IO) from exc
    print(
        f"profile over {len(profile.values)} complete trajectories, "
        f"{len(segments)} segment(s) -> {out_dir / PROFILE_FILE}"
    )
    _update_manifest(
        out_dir,
        "profile",
        {
            "command": "profile",
            "peak_height": args.peak_height,
            "min_distance": args.min_distance,
            "segments": len(segments),
        },
    )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    out_dir = _ensure_out_dir(args.out)
    tset = _load_trajectories(out_dir)
    profile, segments = _load_profile(out_dir)
    table = frequency_table(tset, profile, segments)
    try:
        write_stats_csv(out_dir / STATS_FILE, table)
    except OSError as exc:
        raise CliError(f"cannot write stats: {exc}", EXIT_IO) from exc
    print(
        f"legal-reference frequencies for {table.segment_count} segment(s) "
        f"-> {out_dir / STATS_FILE}"
    )
    _update_manifest(out_dir, "stats", {"command": "stats", "rows": len(table.rows)})
    return EXIT_OK


def _default_u_plus(out_dir: Path) -> float:
    profile, segments = _load_profile(out_dir)
    if len(segments) < 2:
        raise CliError(
            "profile has a single segment; supply --u-plus explicitly", EXIT_VALIDATION
        )
    return profile.values[segments[0].stop]


def cmd_induce(args: argparse.Namespace) -> int:
    out_dir = _ensure_out_dir(args.out)
    tset = _load_trajectories(out_dir)
    u_plus = args.u_plus if args.u_plus is not None else _default_u_plus(out_dir)
    try:
        config = InductionConfig(
            u_plus=u_plus,
            max_literals=args.max_literals,
            beam_width=args.beam_width,
            max_clauses=args.max_clauses,
            top_k_edges=args.top_k,
        )
        examples = label(tset, u_plus)
        background = build_background(tset, config)
        for warning in list(examples.warnings) + list(background.warnings):
            print(f"warning: {warning}", file=sys.stderr)
        hypothesis = induce(examples, background, config)
        overall = evaluate(hypothesis, examples, background)
    except InductionError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    try:
        write_hypothesis_json(hypothesis, examples, overall, out_dir / HYPOTHESIS_JSON)
        write_hypothesis_text(hypothesis, overall, out_dir / HYPOTHESIS_TEXT)
    except OSError as exc:
        raise CliError(f"cannot write hypothesis: {exc}", EXIT_IO) from exc
    for warning in hypothesis.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    accuracy = "undefined" if overall.accuracy is None else f"{overall.accuracy:.4f}"
    f1 = "undefined" if overall.f1 is None else f"{overall.f1:.4f}"
    print(
        f"{len(hypothesis.clauses)} clause(s), accuracy {accuracy}, f1 {f1} "
        f"-> {out_dir / HYPOTHESIS_JSON}"
    )
    _update_manifest(
        out_dir,
        "induce",
        {
            "command": "induce",
            "u_plus": u_plus,
            "max_literals": args.max_literals,
            "beam_width": args.beam_width,
            "max_clauses": args.max_clauses,
            "clauses": len(hypothesis.clauses),
        },
    )
    return EXIT_OK


def cmd_policy(args: argparse.Namespace) -> int:
    out_dir = _ensure_out_dir(args.out)
    tset = _load_trajectories(out_dir)
    hypothesis, u_plus, _overall = _load_hypothesis(out_dir)
    try:
        config = WelfareConfig(welfare_kind=_WELFARE_ALIASES[args.welfare])
        examples = label(tset, u_plus)
        background = build_background(tset, InductionConfig(u_plus=u_plus))
        report = delta_restriction(tset, hypothesis, examples, background, config)
    except (PolicyError, InductionError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    try:
        write_policy_report(report, out_dir / POLICY_FILE)
    except OSError as exc:
        raise CliError(f"cannot write policy report: {exc}", EXIT_IO) from exc
    delta = "undefined" if report.delta_h is None else f"{report.delta_h:.6f}"
    print(
        f"welfare {report.welfare_kind}: Delta(H) = {delta}, verdict {report.verdict} "
        f"-> {out_dir / POLICY_FILE}"
    )
    _update_manifest(
        out_dir,
        "policy",
        {"command": "policy", "welfare": config.welfare_kind, "verdict": report.verdict},
    )
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    if args.top_k < 1:
        raise CliError("--top-k must be at least 1", EXIT_VALIDATION)
    out_dir = _ensure_out_dir(args.out)
    hypothesis, _u_plus, _overall = _load_hypothesis(out_dir)
    graph = scheme_graph(hypothesis, args.top_k)
    try:
        write_dot(graph, out_dir / DOT_FILE)
        write_edges_csv(graph, out_dir / EDGES_FILE)
    except OSError as exc:
        raise CliError(f"cannot write graph: {exc}", EXIT_IO) from exc
    print(f"{len(graph.edges)} edge(s) -> {out_dir / DOT_FILE}, {out_dir / EDGES_FILE}")
    _update_manifest(
        out_dir, "graph", {"command": "graph", "top_k": args.top_k, "edges": len(graph.edges)}
    )
    return EXIT_OK


# ============================================================================
# Parser
# ============================================================================


def _add_out_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--out", default=".", metavar="DIR", help="run directory (default: current)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="loophound",
        description="Explore incorporation trajectories, surface loopholes, "
        "learn scheme hypotheses, and score policy restrictions.",
    )
    parser.add_argument("--version", action="version", version=f"loophound {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser("check", help="validate a ruleset and a state document")
    check.add_argument("ruleset", help="path to a .lhl ruleset document")
    check.add_argument("state", help="path to a .lhl scenario document")
    check.set_defaults(func=cmd_check)

    explore_cmd = commands.add_parser("explore", help="run the randomized trajectory search")
    explore_cmd.add_argument(
        "--ruleset", default=str(corpus_path("table1.lhl")), help="ruleset document path"
    )
    explore_cmd.add_argument(
        "--scenario", default=str(corpus_path("scenario.lhl")), help="scenario document path"
    )
    explore_cmd.add_argument("--seed", type=int, default=7)
    explore_cmd.add_argument("--iterations", type=int, default=50)
    explore_cmd.add_argument("--expansions", type=int, default=1000)
    explore_cmd.add_argument("--beta", type=float, default=0.01)
    explore_cmd.add_argument("--tau0", type=float, default=5.0)
    explore_cmd.add_argument("--max-steps", type=int, default=12)
    explore_cmd.add_argument("--cost", type=float, default=1.0)
    explore_cmd.add_argument("--threads", type=int, default=1)
    _add_out_flag(explore_cmd)
    explore_cmd.set_defaults(func=cmd_explore)

    profile_cmd = commands.add_parser("profile", help="utility profile and segmentation")
    profile_cmd.add_argument("--peak-height", type=float, default=None)
    profile_cmd.add_argument("--min-distance", type=int, default=100)
    _add_out_flag(profile_cmd)
    profile_cmd.set_defaults(func=cmd_profile)

    stats_cmd = commands.add_parser("stats", help="per-segment legal-reference frequencies")
    _add_out_flag(stats_cmd)
    stats_cmd.set_defaults(func=cmd_stats)

    induce_cmd = commands.add_parser("induce", help="learn a scheme hypothesis")
    induce_cmd.add_argument("--u-plus", type=float, default=None)
    induce_cmd.add_argument("--max-literals", type=int, default=7)
    induce_cmd.add_argument("--beam-width", type=int, default=64)
    induce_cmd.add_argument("--max-clauses", type=int, default=8)
    induce_cmd.add_argument("--top-k", type=int, default=10)
    _add_out_flag(induce_cmd)
    induce_cmd.set_defaults(func=cmd_induce)

    policy_cmd = commands.add_parser("policy", help="welfare effect of restricting H")
    policy_cmd.add_argument(
        "--welfare",
        default="mean_tax",
        choices=sorted(_WELFARE_ALIASES),
        help="welfare evaluator (default: mean_tax)",
    )
    _add_out_flag(policy_cmd)
    policy_cmd.set_defaults(func=cmd_policy)

    graph_cmd = commands.add_parser("graph", help="export the weighted scheme graph")
    graph_cmd.add_argument("--top-k", type=int, default=10)
    _add_out_flag(graph_cmd)
    graph_cmd.set_defaults(func=cmd_graph)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ExplorerError, InductionError, PolicyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
