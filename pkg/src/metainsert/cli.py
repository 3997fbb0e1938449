"""Command-line interface.

Subcommands: train, adapt, eval, bench, sac-train, grasp-correct,
grad-check. Every command takes an explicit seed and writes deterministic
output files, so a fixed seed reproduces results byte for byte.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import (SUITE_CELLS, BenchReport, SuiteCell, eval_policy,
                    run_adaptation_experiment, write_report)
from .config import read_kv
from .env import FAMILIES, MM, InsertionEnv, TaskFamily, TaskParams, sample_task
from .grasp import estimate_offset, read_pgm
from .nn import save_checkpoint
from .pearl import (PearlConfig, adapt, checkpoint_meta, config_from_meta,
                    meta_train, pearl_config_from_kv)
from .sac import TrainLogRow, sac_config_from_kv, sac_train
from .verify import run_gradient_checks


def _family(name: str) -> TaskFamily:
    if name in FAMILIES:
        return FAMILIES[name]
    path = Path(name)
    if path.exists():
        return TaskFamily.load(path)
    raise ValueError(f"unknown family {name!r} (not a preset, not a file)")


def _load_train_kv(path: str | None) -> dict[str, str]:
    return read_kv(path) if path else {}


def _write_lines(path, lines: list[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    family = _family(args.family)
    cfg = pearl_config_from_kv(_load_train_kv(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = meta_train(family, cfg, args.seed,
                        checkpoint_path=out / "checkpoint.json",
                        max_env_steps=args.max_env_steps)
    _write_lines(out / "train_log.csv",
                 [TrainLogRow.HEADER] + [row.csv() for row in result.history])
    print(f"trained {result.train_steps} steps over {result.env_steps} env steps; "
          f"checkpoint at {out / 'checkpoint.json'}")
    return 0


def cmd_sac_train(args) -> int:
    family = _family(args.family)
    rng = np.random.default_rng(args.task_seed)
    noise = args.noise_mm * MM
    offset = rng.uniform(-noise, noise, size=2) if noise > 0 else np.zeros(2)
    task = TaskParams(
        goal_offset=(float(offset[0]), float(offset[1])),
        block_side=float(rng.uniform(family.block_side_min, family.block_side_max)),
        step_scale=float(rng.uniform(family.step_scale_min, family.step_scale_max)),
        hole_side=family.hole_side, success_depth=family.success_depth,
        task_id=args.task_seed)
    cfg = sac_config_from_kv(_load_train_kv(args.config))
    result = sac_train(task, cfg, family.env_config(), args.budget, args.seed,
                       warmup_episodes=args.warmup)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = checkpoint_meta(PearlConfig(latent_dim=0, sac=cfg), "sac", args.seed,
                           result.env_steps, result.train_steps)
    meta["latent_dim"] = 0
    save_checkpoint(result.store, out / "checkpoint.json", meta)
    _write_lines(out / "train_log.csv",
                 [TrainLogRow.HEADER] + [row.csv() for row in result.history])
    final = result.history[-1].success_rate if result.history else float("nan")
    print(f"sac trained for {result.env_steps} env steps; last eval success "
          f"{final}; checkpoint at {out / 'checkpoint.json'}")
    return 0


def cmd_adapt(args) -> int:
    from .nn import load_checkpoint

    store, meta = load_checkpoint(args.ckpt)
    cfg = config_from_meta(meta)
    family = _family(args.family)
    task = sample_task(args.task_seed, family)
    env = InsertionEnv(task, family.env_config(), reward="sparse")
    rng = np.random.default_rng(args.seed)
    result = adapt(store, cfg, env, args.trials, rng,
                   stochastic=not args.deterministic)
    _write_lines(args.out, result.csv_lines())
    rate = sum(result.successes) / max(1, len(result.successes))
    print(f"adaptation over {args.trials} trials: success rate {rate}; "
          f"log at {args.out}")
    return 0


def _cells(names: list[str], draws: int | None, episodes: int | None) -> list[SuiteCell]:
    cells = []
    for name in names:
        if name not in SUITE_CELLS:
            raise ValueError(f"unknown suite {name!r}; choose from "
                             f"{sorted(SUITE_CELLS)}")
        cell = SUITE_CELLS[name]
        if draws is not None or episodes is not None:
            cell = SuiteCell(cell.family, cell.noise_mm,
                             draws or cell.draws,
                             episodes or cell.episodes_per_draw)
        cells.append(cell)
    return cells


def cmd_eval(args) -> int:
    report = eval_policy(
        args.policy, _cells([args.suite], args.draws, args.episodes), args.seed,
        checkpoint=args.ckpt, deterministic=args.deterministic,
        adapt_trials=args.adapt_trials, grasp_noise=args.grasp_noise,
        grasp_correct=not args.no_grasp_correct,
        centered_reset=args.centered_reset, trace_path=args.trace)
    if args.out:
        write_report(report, args.out, args.format)
    for line in report.csv_lines():
        print(line)
    return 0


def cmd_bench(args) -> int:
    report = BenchReport()
    for policy in args.policy:
        sub = eval_policy(policy, _cells(args.suite, args.draws, args.episodes),
                          args.seed, checkpoint=args.ckpt,
                          deterministic=args.deterministic,
                          adapt_trials=args.adapt_trials,
                          grasp_noise=args.grasp_noise)
        report.rows.extend(sub.rows)
    if args.out:
        write_report(report, args.out, args.format)
    for line in report.csv_lines():
        print(line)
    return 0


def cmd_adapt_curves(args) -> int:
    curves = run_adaptation_experiment(args.ckpt, _family(args.family),
                                       tasks=args.tasks, repeats=args.repeats,
                                       trials=args.trials, seed=args.seed)
    _write_lines(args.out, curves.csv_lines())
    print(f"trial 1 success {curves.mean[0]}; trial {args.trials} success "
          f"{curves.mean[-1]}; curves at {args.out}")
    return 0


def cmd_grasp_correct(args) -> int:
    ref = read_pgm(args.ref)
    img = read_pgm(args.img)
    off, metric = estimate_offset(ref, img, args.mm_per_px)
    print(f"{off.dx} {off.dy} {off.dx * args.mm_per_px} "
          f"{off.dy * args.mm_per_px} {off.score}")
    return 0


def cmd_grad_check(args) -> int:
    reports = run_gradient_checks(seed=args.seed)
    lines = []
    worst = 0.0
    for name in sorted(reports):
        rep = reports[name]
        worst = max(worst, rep.max_rel_error)
        status = "PASS" if rep.passed(args.tolerance) else "FAIL"
        lines.append(f"{status} loss={name} max_rel_error={rep.max_rel_error!r} "
                     f"coords={rep.coords_checked}")
    for line in lines:
        print(line)
    if args.out:
        _write_lines(args.out, lines)
    return 0 if worst <= args.tolerance else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metainsert",
        description="Simulated industrial insertion: meta-RL training, "
                    "few-shot adaptation, scripted baselines and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train the latent-context policy")
    p.add_argument("--family", default="plug")
    p.add_argument("--config", default=None, help="key=value training config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--max-env-steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sac-train", help="train the from-scratch baseline")
    p.add_argument("--family", default="plug")
    p.add_argument("--config", default=None)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--noise-mm", type=float, default=0.0,
                   help="fixed miscalibration range for the training task")
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--warmup", type=int, default=200,
                   help="uniform-exploration episodes before updates start")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sac_train)

    p = sub.add_parser("adapt", help="few-shot adaptation on one task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--family", default="plug")
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate one policy on one suite cell")
    p.add_argument("--policy", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--adapt-trials", type=int, default=0)
    p.add_argument("--grasp-noise", action="store_true")
    p.add_argument("--no-grasp-correct", action="store_true")
    p.add_argument("--centered-reset", action="store_true")
    p.add_argument("--trace", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run policies over suite cells")
    p.add_argument("--suite", action="append", required=True)
    p.add_argument("--policy", action="append", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--adapt-trials", type=int, default=0)
    p.add_argument("--grasp-noise", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("adapt-curves", help="adaptation curves on held-out tasks")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--family", default="plug")
    p.add_argument("--tasks", type=int, default=10)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt_curves)

    p = sub.add_parser("grasp-correct", help="estimate a grasp offset from images")
    p.add_argument("--ref", required=True)
    p.add_argument("--img", required=True)
    p.add_argument("--mm-per-px", type=float, required=True)
    p.set_defaults(func=cmd_grasp_correct)

    p = sub.add_parser("grad-check", help="verify gradients by finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_grad_check)

    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


def grasp_correct_entry() -> None:
    sys.exit(cli_dispatch(["grasp-correct"] + sys.argv[1:]))
