#!/usr/bin/env python3
"""Success-rate / insertion-time table over the five evaluation cells.

Scripted baselines run as-is; pass checkpoints to include the learned
policies.

Usage:
    python scripts/run_bench.py [--pearl ckpt.json] [--sac ckpt.json] [out.csv]
"""
import argparse

from metainsert.bench import SUITE_CELLS, BenchReport, eval_policy, write_report

parser = argparse.ArgumentParser()
parser.add_argument("--pearl", default=None)
parser.add_argument("--sac", default=None)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--adapt-trials", type=int, default=20)
parser.add_argument("out", nargs="?", default="bench_report.csv")
args = parser.parse_args()

cells = [SUITE_CELLS[name] for name in ("plug0", "plug2", "plug3", "gear0", "gear2")]
report = BenchReport()
for policy in ("straight_down", "random", "spiral"):
    report.rows.extend(eval_policy(policy, cells, args.seed).rows)
if args.sac:
    report.rows.extend(
        eval_policy("sac", cells, args.seed, checkpoint=args.sac).rows)
if args.pearl:
    report.rows.extend(
        eval_policy("pearl", cells, args.seed, checkpoint=args.pearl,
                    adapt_trials=args.adapt_trials).rows)
write_report(report, args.out, "csv")
for line in report.csv_lines():
    print(line)
