#!/usr/bin/env python3
"""Train the from-scratch single-task baseline on the calibrated plug task.

Usage: python scripts/sac_baseline.py [seed] [out_dir]
"""
import sys

from metainsert.cli import cli_dispatch

seed = sys.argv[1] if len(sys.argv) > 1 else "0"
out = sys.argv[2] if len(sys.argv) > 2 else f"runs/sac_seed{seed}"
sys.exit(cli_dispatch([
    "sac-train", "--family", "plug", "--task-seed", "0", "--noise-mm", "0",
    "--budget", "200000", "--seed", seed, "--out", out,
]))
