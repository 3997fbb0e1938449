#!/usr/bin/env python3
"""Few-shot adaptation curves on held-out plug tasks.

Usage: python scripts/adaptation_curves.py <checkpoint.json> [out.csv]
"""
import sys

from metainsert.cli import cli_dispatch

if len(sys.argv) < 2:
    print("usage: adaptation_curves.py <checkpoint.json> [out.csv]")
    raise SystemExit(2)
out = sys.argv[2] if len(sys.argv) > 2 else "adaptation_curves.csv"
sys.exit(cli_dispatch([
    "adapt-curves", "--ckpt", sys.argv[1], "--family", "plug",
    "--tasks", "10", "--repeats", "20", "--trials", "20",
    "--seed", "0", "--out", out,
]))
