#!/usr/bin/env python3
"""Walk the whole pipeline on the bundled corpus, in one process.

Explores incorporation trajectories for the shipped five-country world,
segments the utility profile, prints which legal references concentrate in
the most profitable segment, learns a clause describing those plans, and
scores the welfare effect of restricting them.

Run with no arguments for a quick desk-scale pass, or --full for the
reference scale (50 x 1000 expansions, about a minute):

    python3 demos/discover_sandwich.py [--full]
"""

from __future__ import annotations

import argparse
import time

from loophound import corpus_path
from loophound.analytics import detect_segments, frequency_table, utility_profile
from loophound.dsl import parse_ruleset, parse_scenario
from loophound.explorer import SearchParams, explore
from loophound.induction import (
    InductionConfig,
    build_background,
    evaluate,
    induce,
    label,
    scheme_graph,
)
from loophound.policy import WelfareConfig, delta_restriction


def main() -> None:
    cli = argparse.ArgumentParser(description=__doc__)
    cli.add_argument("--full", action="store_true", help="reference-scale search")
    cli.add_argument("--seed", type=int, default=7)
    args = cli.parse_args()

    ruleset = parse_ruleset(corpus_path("table1.lhl").read_text()).document
    scenario = parse_scenario(corpus_path("scenario.lhl").read_text()).document

    if args.full:
        params = SearchParams(seed=args.seed, iterations=50, expansions=1000)
        min_distance = 100
    else:
        params = SearchParams(seed=args.seed, iterations=20, expansions=200)
        min_distance = 5

    print(f"searching ({params.iterations} x {params.expansions}, seed {params.seed}) ...")
    started = time.monotonic()
    tset = explore(ruleset, scenario, params)
    complete = [t for t in tset.trajectories if t.complete]
    print(
        f"  {len(tset.trajectories)} trajectories, {len(complete)} complete, "
        f"{time.monotonic() - started:.1f}s"
    )

    profile = utility_profile(tset)
    segments = detect_segments(profile, None, min_distance)
    print(f"\nutility profile: {len(profile.values)} plans, {len(segments)} segments")
    for i, seg in enumerate(segments):
        lo, hi = profile.values[seg.stop - 1], profile.values[seg.start]
        print(f"  segment {i}: plans {seg.start}..{seg.stop - 1}, utility {hi:.2f} .. {lo:.2f}")

    table = frequency_table(tset, profile, segments)
    print("\nlegal references, top segment vs bottom segment (mean per plan):")
    for (ref, kind), values in table.rows.items():
        if kind == "action":
            continue
        if values[0] > 0 or values[-1] > 0:
            print(f"  {ref:<14} {kind:<10} {values[0]:>6.3f}  vs  {values[-1]:>6.3f}")

    if len(segments) < 2:
        print("\nsingle segment; nothing to label, stopping here")
        return
    u_plus = profile.values[segments[0].stop]
    config = InductionConfig(u_plus=u_plus)
    examples = label(tset, u_plus)
    background = build_background(tset, config)
    hypothesis = induce(examples, background, config)
    overall = evaluate(hypothesis, examples, background)
    print(f"\nlearned hypothesis (u+ = {u_plus:.2f}):")
    for clause in hypothesis.clauses:
        print(f"  {clause.render()}")
    print(f"  accuracy {overall.accuracy:.3f}, f1 {overall.f1:.3f}")

    print("\nscheme graph (clause literals as weighted edges):")
    for edge in scheme_graph(hypothesis, top_k=10).edges:
        print(f"  {edge.source} -[{edge.label}]-> {edge.target}  (weight {edge.weight:.3f})")

    report = delta_restriction(
        tset, hypothesis, examples, background, WelfareConfig("mean_tax_collected")
    )
    print("\npolicy evaluation (mean tax collected):")
    print(f"  W(Omega)   = {report.welfare_omega:.4f}")
    print(f"  delta(E+)  = {report.delta_e:.4f}")
    print(f"  Delta(H)   = {report.delta_h:.4f}")
    print(f"  verdict: {report.verdict}")


if __name__ == "__main__":
    main()
