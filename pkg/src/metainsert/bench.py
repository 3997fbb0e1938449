"""Benchmark harness: evaluation suites, the uniform episode loop for every
policy, Table-style reports and adaptation curves.

A suite cell pins a use case (plug or gear) and a goal-noise level. Each
perturbation draw fixes one miscalibration (applied as the task's goal
offset) plus a fresh clearance and controller scale from the family; the
stated number of episodes then runs against that draw. Optionally each
episode injects a synthetic grasp error that must be recovered through the
image-correlation pipeline before it can be corrected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import SearchConfig, SearchPolicy, StraightDownPolicy, random_points, spiral_points
from .env import MM, FAMILIES, InsertionEnv, TaskFamily, TaskParams, sample_task
from .grasp import estimate_offset, shift_image, textured_image
from .nn import load_checkpoint
from .pearl import (ContextBatch, PearlConfig, adapt, config_from_meta,
                    encode_posterior, sample_z)
from .rollout import EpisodeResult, LearnedPolicy, run_episode
from .sac import actor_spec

NOISE_LEVELS_MM = (0.0, 2.0, 3.0)
GRASP_ERROR_MAX = 1.0 * MM
GRASP_MM_PER_PX = 0.25
GRASP_IMAGE_SIZE = 64


@dataclass(frozen=True)
class SuiteCell:
    family: str
    noise_mm: float
    draws: int = 20
    episodes_per_draw: int = 5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.noise_mm not in NOISE_LEVELS_MM:
            raise ValueError(f"noise level must be one of {NOISE_LEVELS_MM} mm")
        if self.draws < 1 or self.episodes_per_draw < 1:
            raise ValueError("draws and episodes must be >= 1")

    @property
    def episodes(self) -> int:
        return self.draws * self.episodes_per_draw


SUITE_CELLS = {
    "plug0": SuiteCell("plug", 0.0),
    "plug2": SuiteCell("plug", 2.0),
    "plug3": SuiteCell("plug", 3.0),
    "gear0": SuiteCell("gear", 0.0),
    "gear2": SuiteCell("gear", 2.0),
}

POLICY_NAMES = ("straight_down", "random", "spiral", "sac", "pearl")


@dataclass
class ReportRow:
    policy: str
    family: str
    noise_mm: float
    episodes: int
    success_rate: float
    steps_mean: float | None
    steps_std: float | None
    seconds_mean: float | None
    adaptation_curve: list[float] | None = None

    def csv(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)
        return (f"{self.policy},{self.family},{self.noise_mm!r},{self.episodes},"
                f"{self.success_rate!r},{fmt(self.steps_mean)},{fmt(self.steps_std)},"
                f"{fmt(self.seconds_mean)}")


CSV_HEADER = "policy,family,noise_mm,episodes,success_rate,steps_mean,steps_std,seconds_mean"


@dataclass
class BenchReport:
    rows: list[ReportRow] = field(default_factory=list)

    def csv_lines(self) -> list[str]:
        return [CSV_HEADER] + [r.csv() for r in self.rows]

    def to_json(self) -> str:
        return json.dumps({"rows": [vars(r) for r in self.rows]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        doc = json.loads(text)
        return cls([ReportRow(**row) for row in doc["rows"]])


def write_report(report: BenchReport, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write("\n".join(report.csv_lines()) + "\n")
    elif fmt == "json":
        with open(path, "w") as fh:
            fh.write(report.to_json() + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def draw_cell_task(cell: SuiteCell, rng: np.random.Generator,
                   task_id: int) -> TaskParams:
    """One perturbation draw: miscalibration plus family geometry."""
    fam = FAMILIES[cell.family]
    noise = cell.noise_mm * MM
    off = rng.uniform(-noise, noise, size=2) if noise > 0 else np.zeros(2)
    return TaskParams(
        goal_offset=(float(off[0]), float(off[1])),
        block_side=float(rng.uniform(fam.block_side_min, fam.block_side_max)),
        step_scale=float(rng.uniform(fam.step_scale_min, fam.step_scale_max)),
        hole_side=fam.hole_side,
        success_depth=fam.success_depth,
        task_id=task_id,
    )


def inject_grasp_error(task: TaskParams, rng: np.random.Generator,
                       correct: bool = True):
    """Displace the part in the gripper and optionally correct via imaging.

    A part displaced +g relative to the reference grasp (quantized to the
    camera's pixel grid) starts each trial shifted by +g and biases the
    observation by -g. The correlation pipeline estimates g from a synthetic
    underside image; the goal adjustment then cancels both effects.

    Returns (task with the effective miscalibration, reset shift, injected
    displacement in meters).
    """
    g_raw = rng.uniform(-GRASP_ERROR_MAX, GRASP_ERROR_MAX, size=2)
    px = np.rint(g_raw / (GRASP_MM_PER_PX * MM)).astype(int)
    g = px * GRASP_MM_PER_PX * MM
    reference = textured_image(np.random.default_rng(20_407),
                               GRASP_IMAGE_SIZE, GRASP_IMAGE_SIZE)
    query = shift_image(reference, int(px[0]), int(px[1]))
    effective = np.array(task.goal_offset) - g
    reset_shift = g.copy()
    if correct:
        _, estimate = estimate_offset(reference, query, GRASP_MM_PER_PX)
        effective = effective + estimate
        reset_shift = reset_shift - estimate
    bounded = np.clip(effective, -5 * MM, 5 * MM)
    task_eff = replace(task, goal_offset=(float(bounded[0]), float(bounded[1])))
    return task_eff, (float(reset_shift[0]), float(reset_shift[1])), g


class _Loaded:
    """Checkpoint plus the config needed to rebuild its policy."""

    def __init__(self, path):
        self.store, self.meta = load_checkpoint(path)
        self.cfg: PearlConfig = config_from_meta(self.meta)
        self.latent_dim = int(self.meta["latent_dim"])

    def policy(self, z: np.ndarray | None, stochastic: bool) -> LearnedPolicy:
        return LearnedPolicy(self.store, actor_spec(self.cfg.sac, self.latent_dim),
                             self.cfg.sac.obs_scale, self.cfg.sac.max_action,
                             z=z, stochastic=stochastic)


def _aggregate(policy: str, cell: SuiteCell, results: list[EpisodeResult],
               curve: list[float] | None = None) -> ReportRow:
    n = len(results)
    wins = sum(int(r.success) for r in results)
    steps = [r.insertion_steps for r in results if r.success and r.insertion_steps]
    seconds = [r.insertion_seconds for r in results
               if r.success and r.insertion_seconds is not None]
    return ReportRow(
        policy=policy, family=cell.family, noise_mm=cell.noise_mm, episodes=n,
        success_rate=wins / n,
        steps_mean=float(np.mean(steps)) if steps else None,
        steps_std=float(np.std(steps, ddof=1)) if len(steps) > 1 else None,
        seconds_mean=float(np.mean(seconds)) if seconds else None,
        adaptation_curve=curve,
    )


def eval_policy(policy: str, cells: list[SuiteCell], seed: int,
                checkpoint=None, deterministic: bool = False,
                adapt_trials: int = 0, grasp_noise: bool = False,
                grasp_correct: bool = True, centered_reset: bool = False,
                search_cfg: SearchConfig = SearchConfig(),
                trace_path=None) -> BenchReport:
    """Evaluate one policy over suite cells through the shared episode driver."""
    if policy not in POLICY_NAMES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICY_NAMES}")
    loaded = None
    if policy in ("sac", "pearl"):
        if checkpoint is None:
            raise ValueError(f"policy {policy!r} needs a checkpoint")
        loaded = _Loaded(checkpoint)
        if policy == "pearl" and loaded.latent_dim == 0:
            raise ValueError("checkpoint has no latent encoder; use policy 'sac'")
    report = BenchReport()
    trace_rows: list[str] = []
    master = np.random.SeedSequence(seed)
    cell_seeds = master.spawn(len(cells))
    for cell, cell_ss in zip(cells, cell_seeds):
        fam = FAMILIES[cell.family]
        env_cfg = fam.env_config(
            **({"reset_cube_side": 0.0} if centered_reset else {}))
        search_env_cfg = replace(env_cfg, horizon=search_cfg.max_env_steps)
        rng = np.random.default_rng(cell_ss)
        results: list[EpisodeResult] = []
        curves: list[list[bool]] = []
        for draw in range(cell.draws):
            task = draw_cell_task(cell, rng, task_id=draw)
            context = ContextBatch.empty()
            if policy == "pearl" and adapt_trials > 0:
                adapt_env = InsertionEnv(task, env_cfg, reward="sparse")
                ares = adapt(loaded.store, loaded.cfg, adapt_env, adapt_trials, rng)
                context = ares.context
                curves.append(ares.successes)
            for _ in range(cell.episodes_per_draw):
                ep_task = task
                ep_env_cfg, ep_search_cfg = env_cfg, search_env_cfg
                if grasp_noise:
                    ep_task, shift, _ = inject_grasp_error(task, rng,
                                                           correct=grasp_correct)
                    ep_env_cfg = replace(env_cfg, reset_shift=shift)
                    ep_search_cfg = replace(search_env_cfg, reset_shift=shift)
                if policy == "straight_down":
                    env = InsertionEnv(ep_task, ep_env_cfg, reward="sparse")
                    actor = StraightDownPolicy(env_cfg.max_step)
                    stop = True
                elif policy in ("random", "spiral"):
                    env = InsertionEnv(ep_task, ep_search_cfg, reward="sparse")
                    pts = (spiral_points(search_cfg) if policy == "spiral"
                           else random_points(search_cfg, rng))
                    actor = SearchPolicy(pts, search_cfg, env_cfg.max_step)
                    stop = True
                else:
                    env = InsertionEnv(ep_task, ep_env_cfg, reward="sparse")
                    z = None
                    if policy == "pearl":
                        posterior = encode_posterior(loaded.store, loaded.cfg, context)
                        z = sample_z(posterior,
                                     rng.standard_normal(loaded.latent_dim))
                    actor = loaded.policy(z, stochastic=not deterministic)
                    stop = False
                res = run_episode(env, actor, rng, record=trace_path is not None,
                                  stop_on_success=stop)
                results.append(res)
                if trace_path is not None:
                    ep_index = len(results) - 1
                    for t, tr in enumerate(res.transitions, start=1):
                        trace_rows.append(
                            f"{ep_index},{t},{tr.s_next[0]!r},{tr.s_next[1]!r},"
                            f"{tr.s_next[2]!r},{tr.a[0]!r},{tr.a[1]!r},{tr.a[2]!r},"
                            f"{tr.r!r},{tr.contact_force_z!r}")
        curve = None
        if curves:
            arr = np.array(curves, dtype=float)
            curve = [float(v) for v in arr.mean(axis=0)]
        report.rows.append(_aggregate(policy, cell, results, curve))
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write("episode,t,x,y,z,ax,ay,az,r,force\n")
            fh.write("\n".join(trace_rows) + ("\n" if trace_rows else ""))
    return report


@dataclass
class AdaptationCurves:
    """Mean success per adaptation trial over held-out tasks and repeats."""

    trials: int
    tasks: int
    repeats: int
    mean: np.ndarray
    std: np.ndarray
    per_run: np.ndarray  # (tasks * repeats, trials) of 0/1

    def csv_lines(self) -> list[str]:
        lines = ["trial,success_mean,success_std,runs"]
        for t in range(self.trials):
            lines.append(f"{t + 1},{self.mean[t]!r},{self.std[t]!r},"
                         f"{self.per_run.shape[0]}")
        return lines


def run_adaptation_experiment(checkpoint, family: TaskFamily, tasks: int = 10,
                              repeats: int = 20, trials: int = 20,
                              seed: int = 0) -> AdaptationCurves:
    """Few-shot adaptation curves on held-out tasks drawn from the family.

    Each held-out task is fixed for the experiment; every repeat re-runs the
    whole adaptation (fresh context, fresh seeds) on that task.
    """
    loaded = _Loaded(checkpoint)
    master = np.random.SeedSequence([seed, 0xAD_AB])
    task_rng = np.random.default_rng(master.spawn(1)[0])
    task_seeds = task_rng.integers(0, 2 ** 62, size=tasks)
    held_out = [sample_task(int(s), family, task_id=1_000_000 + i)
                for i, s in enumerate(task_seeds)]
    env_cfg = family.env_config()
    runs = []
    run_seeds = master.spawn(tasks * repeats)
    i = 0
    for task in held_out:
        for _ in range(repeats):
            rng = np.random.default_rng(run_seeds[i])
            i += 1
            env = InsertionEnv(task, env_cfg, reward="sparse")
            ares = adapt(loaded.store, loaded.cfg, env, trials, rng)
            runs.append([int(s) for s in ares.successes])
    per_run = np.array(runs, dtype=float)
    return AdaptationCurves(
        trials=trials, tasks=tasks, repeats=repeats,
        mean=per_run.mean(axis=0), std=per_run.std(axis=0), per_run=per_run)
