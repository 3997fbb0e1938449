#!/usr/bin/env python3
"""Meta-train the latent-context policy on the plug family.

Usage: python scripts/train_plug.py [seed] [out_dir]
"""
import sys
from pathlib import Path

from metainsert.cli import cli_dispatch

seed = sys.argv[1] if len(sys.argv) > 1 else "0"
out = sys.argv[2] if len(sys.argv) > 2 else f"runs/plug_seed{seed}"
cfg = Path(__file__).resolve().parent.parent / "configs" / "plug_desk.cfg"
sys.exit(cli_dispatch([
    "train", "--family", "plug", "--config", str(cfg),
    "--seed", seed, "--out", out,
]))
