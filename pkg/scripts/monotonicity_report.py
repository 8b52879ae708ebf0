#!/usr/bin/env python3
"""Measure how often gold-slice prefix TSED is non-decreasing.

The syntactic decoding constraint assumes a correct partial slice's tree
similarity to its source never drops at statement boundaries. That is an
empirical premise, not a theorem; this script reports the violation rate
over generated gold slices so the assumption stays visible.
"""
from __future__ import annotations

import argparse

from slicekit import corpus, tsed


def prefix_scores(inst: corpus.SliceInstance) -> list[float]:
    scorer = tsed.PrefixTsedScorer(inst.program_text)
    by_line = {s.line: s for s in inst.statements()}
    tokens: list[str] = []
    scores = []
    for ln in inst.gold_lines:
        stmt = by_line[ln]
        tokens += list(str(ln)) + [":"] + list(stmt.texts) + ["<nl>"]
        scores.append(scorer.score_tokens(tokens))
    return scores


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--instances", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tolerance", type=float, default=1e-9)
    args = ap.parse_args()

    violations = 0
    worst = 0.0
    for i in range(args.instances):
        seed = args.seed * 1_000_003 + i
        inst = corpus.make_instance(corpus.generate_program(seed), seed)
        scores = prefix_scores(inst)
        drops = [a - b for a, b in zip(scores, scores[1:]) if b < a - args.tolerance]
        if drops:
            violations += 1
            worst = max(worst, max(drops))
    rate = violations / args.instances
    print(f"instances: {args.instances}")
    print(f"monotonicity violations: {violations} ({100 * rate:.2f}%)")
    print(f"largest drop: {worst:.6f}")
    print(f"non-decreasing rate: {100 * (1 - rate):.2f}%")


if __name__ == "__main__":
    main()
