"""Latent-context meta-RL: probabilistic task encoder with a
product-of-Gaussians posterior, KL-regularized meta-training over a task
family, and inference-only few-shot adaptation.

Context conventions: a context tuple is (s, a, r, s') flattened to a
10-vector. The reward entry is always the sparse success indicator, both in
meta-training and at adaptation time, so the encoder sees identically
distributed inputs in both phases; the RL losses themselves consume the
dense shaped reward during meta-training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import InsertionEnv, TaskFamily, TaskParams, sample_task
from .nn import GraphParams, ParamStore, mlp_forward, mlp_forward_np, save_checkpoint
from .rollout import EpisodeResult, LearnedPolicy, run_episode
from .sac import (ReplayBuffer, SacConfig, TrainLogRow, actor_spec, encoder_spec,
                  eval_success, init_params, train_step)

VAR_FLOOR = 1e-6
CONTEXT_DIM = 10


@dataclass(frozen=True)
class PearlConfig:
    latent_dim: int = 5
    kl_weight: float = 1.0
    k_collect: int = 3
    context_batch: int = 100
    # When set, the per-step context length is drawn uniformly from
    # [context_batch_min, context_batch] so the posterior sees the spread of
    # precisions that adaptation-time contexts of growing size produce.
    context_batch_min: int | None = None
    meta_batch: int = 10
    num_tasks: int = 50
    iterations: int = 60
    steps_per_iter: int = 200
    tasks_per_collect: int | None = None
    eval_every: int = 10
    # Off-policy training drifts past its peak, so the run keeps the
    # parameter snapshot that scored best on a few-trial adaptation probe
    # over validation tasks drawn from the family (disjoint from the
    # training set; probe env steps count against the budget).
    select_best: bool = True
    probe_every: int = 10
    probe_tasks: int = 6
    probe_trials: int = 12
    sac: SacConfig = field(default_factory=SacConfig)


def pearl_config_from_kv(kv: dict[str, str]) -> PearlConfig:
    from .config import get_float, get_int
    from .sac import sac_config_from_kv

    base = PearlConfig()
    tpc = kv.get("tasks_per_collect", "")
    return PearlConfig(
        latent_dim=get_int(kv, "latent_dim", base.latent_dim),
        kl_weight=get_float(kv, "kl_weight", base.kl_weight),
        k_collect=get_int(kv, "k_collect", base.k_collect),
        context_batch=get_int(kv, "context_batch", base.context_batch),
        context_batch_min=(int(kv["context_batch_min"])
                           if kv.get("context_batch_min") else None),
        meta_batch=get_int(kv, "meta_batch", base.meta_batch),
        num_tasks=get_int(kv, "num_tasks", base.num_tasks),
        iterations=get_int(kv, "iterations", base.iterations),
        steps_per_iter=get_int(kv, "steps_per_iter", base.steps_per_iter),
        tasks_per_collect=int(tpc) if tpc else base.tasks_per_collect,
        eval_every=get_int(kv, "eval_every", base.eval_every),
        select_best=kv.get("select_best", "1") not in ("0", "false", "no"),
        probe_every=get_int(kv, "probe_every", base.probe_every),
        probe_tasks=get_int(kv, "probe_tasks", base.probe_tasks),
        probe_trials=get_int(kv, "probe_trials", base.probe_trials),
        sac=sac_config_from_kv(kv),
    )


@dataclass(frozen=True)
class LatentPosterior:
    """Diagonal Gaussian over the task latent."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if np.any(self.var <= 0.0):
            raise ValueError("posterior variance must be positive")


def prior(latent_dim: int) -> LatentPosterior:
    return LatentPosterior(np.zeros(latent_dim), np.ones(latent_dim))


class ContextBatch:
    """Ordered collection of (s, a, r, s') tuples, possibly empty."""

    def __init__(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, CONTEXT_DIM)
        if not np.all(np.isfinite(rows)):
            raise ValueError("context tuples must be finite")
        self.rows = rows

    @classmethod
    def empty(cls) -> "ContextBatch":
        return cls(np.zeros((0, CONTEXT_DIM)))

    def __len__(self) -> int:
        return self.rows.shape[0]

    def extended(self, transitions, task: TaskParams) -> "ContextBatch":
        """Append one rollout's tuples; the reward entry is the sparse flag."""
        new = [
            np.concatenate([
                tr.s, tr.a,
                [1.0 if tr.s_next[2] <= -task.success_depth else 0.0],
                tr.s_next,
            ])
            for tr in transitions
        ]
        if not new:
            return self
        return ContextBatch(np.concatenate([self.rows, np.array(new)], axis=0))


def context_rows_from_batch(batch: dict[str, np.ndarray]) -> np.ndarray:
    """Assemble context rows from a replay-buffer sample."""
    return np.concatenate(
        [batch["s"], batch["a"], batch["r_sparse"][:, None], batch["s_next"]], axis=1)


def _scale_context(rows: np.ndarray, cfg: SacConfig) -> np.ndarray:
    scaled = rows.copy()
    scaled[:, 0:3] *= cfg.obs_scale
    scaled[:, 3:6] *= cfg.act_scale
    scaled[:, 7:10] *= cfg.obs_scale
    return scaled


def product_of_gaussians(means: np.ndarray, variances: np.ndarray,
                         include_prior: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Normalized product of diagonal Gaussian factors.

    Precisions add; the mean is the precision-weighted average. With
    ``include_prior`` a unit N(0, I) factor joins the product so the empty
    set of factors yields the prior exactly.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if means.shape != variances.shape:
        raise ValueError("means and variances must have matching shapes")
    if np.any(variances <= 0.0):
        raise ValueError("factor variances must be positive")
    precision = (1.0 / variances).sum(axis=0)
    weighted = (means / variances).sum(axis=0)
    if include_prior:
        precision = precision + 1.0
    elif means.shape[0] == 0:
        raise ValueError("empty product without a prior factor")
    return weighted / precision, 1.0 / precision


def encoder_factors_np(store: ParamStore, cfg: PearlConfig,
                       rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = mlp_forward_np(store, "encoder", encoder_spec(cfg.sac, cfg.latent_dim),
                         _scale_context(rows, cfg.sac))
    mu = out[:, :cfg.latent_dim]
    var = np.logaddexp(0.0, out[:, cfg.latent_dim:]) + VAR_FLOOR
    return mu, var


def encode_posterior(store: ParamStore, cfg: PearlConfig,
                     context: ContextBatch) -> LatentPosterior:
    """Posterior over the latent given the context (prior when empty)."""
    if len(context) == 0:
        return prior(cfg.latent_dim)
    mu, var = encoder_factors_np(store, cfg, context.rows)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
        raise ValueError("non-finite encoder output")
    mean, pvar = product_of_gaussians(mu, var, include_prior=True)
    return LatentPosterior(mean, pvar)


def sample_z(posterior: LatentPosterior, noise: np.ndarray) -> np.ndarray:
    return posterior.mean + np.sqrt(posterior.var) * np.asarray(noise)


def kl_to_prior(posterior: LatentPosterior) -> float:
    """Closed-form KL from the posterior to the standard normal prior."""
    return float(0.5 * np.sum(posterior.mean ** 2 + posterior.var - 1.0
                              - np.log(posterior.var)))


def kl_loss(posterior: LatentPosterior, beta: float) -> float:
    return beta * kl_to_prior(posterior)


def encode_posterior_t(gp: GraphParams, cfg: PearlConfig, rows: np.ndarray,
                       noise: np.ndarray) -> tuple[Tensor, Tensor]:
    """Taped posterior encode: reparameterized latent sample and KL penalty.

    Returns (z, kl) where z has shape (1, latent_dim). With an empty context
    the posterior is the prior: z is the raw noise and the KL is a constant
    zero, so no encoder gradient flows.
    """
    ld = cfg.latent_dim
    if rows.shape[0] == 0:
        return Tensor(noise[None, :].copy()), Tensor(0.0)
    out = mlp_forward(gp, "encoder", encoder_spec(cfg.sac, ld),
                      Tensor(_scale_context(rows, cfg.sac)))
    mu = ad.slice_cols(out, 0, ld)
    var_n = ad.add(ad.softplus(ad.slice_cols(out, ld, 2 * ld)), VAR_FLOOR)
    prec_n = ad.reciprocal(var_n)
    precision = ad.add(ad.sum_rows(prec_n), 1.0)
    var = ad.reciprocal(precision)
    mean = ad.mul(ad.sum_rows(ad.mul(mu, prec_n)), var)
    z = ad.add(mean, ad.mul(ad.sqrt(var), Tensor(noise[None, :])))
    kl = ad.mul(
        ad.sum_all(ad.sub(ad.add(ad.square(mean), var), ad.add(ad.log(var), 1.0))),
        0.5 * cfg.kl_weight)
    return z, kl


def collect_rollout(store: ParamStore, cfg: PearlConfig, env: InsertionEnv,
                    context: ContextBatch, stochastic: bool,
                    rng: np.random.Generator) -> tuple[EpisodeResult, ContextBatch]:
    """One episode under a latent drawn from the current context posterior.

    The latent is sampled once before the episode; the returned context has
    the episode's tuples appended.
    """
    posterior = encode_posterior(store, cfg, context)
    z = sample_z(posterior, rng.standard_normal(cfg.latent_dim))
    policy = LearnedPolicy(store, actor_spec(cfg.sac, cfg.latent_dim),
                           cfg.sac.obs_scale, cfg.sac.max_action, z=z,
                           stochastic=stochastic)
    result = run_episode(env, policy, rng, record=True)
    return result, context.extended(result.transitions, env.task)


@dataclass
class AdaptResult:
    """Few-shot adaptation record: one stochastic trial per row."""

    successes: list[bool]
    insertion_steps: list[int | None]
    posterior_mean_norms: list[float]
    posterior_var_norms: list[float]
    context: ContextBatch

    def csv_lines(self) -> list[str]:
        lines = ["trial_index,success,insertion_steps,cumulative_success_rate,"
                 "posterior_mean_norm,posterior_var_norm"]
        wins = 0
        for i, ok in enumerate(self.successes):
            wins += int(ok)
            steps = self.insertion_steps[i]
            lines.append(
                f"{i + 1},{int(ok)},{'' if steps is None else steps},"
                f"{wins / (i + 1)!r},{self.posterior_mean_norms[i]!r},"
                f"{self.posterior_var_norms[i]!r}")
        return lines


def adapt(store: ParamStore, cfg: PearlConfig, env: InsertionEnv, trials: int,
          rng: np.random.Generator, stochastic: bool = True) -> AdaptResult:
    """Accumulate context over K sparse-reward trials; no parameter updates.

    Before every trial the latent is resampled from the posterior over all
    context gathered so far.
    """
    if trials < 0:
        raise ValueError("trials must be >= 0")
    if env.reward != "sparse":
        raise ValueError("adaptation runs on the sparse reward")
    context = ContextBatch.empty()
    result = AdaptResult([], [], [], [], context)
    for _ in range(trials):
        posterior = encode_posterior(store, cfg, context)
        episode, context = collect_rollout(store, cfg, env, context, stochastic, rng)
        result.successes.append(episode.success)
        result.insertion_steps.append(episode.insertion_steps)
        result.posterior_mean_norms.append(float(np.linalg.norm(posterior.mean)))
        result.posterior_var_norms.append(float(np.linalg.norm(posterior.var)))
    result.context = context
    return result


@dataclass
class MetaTrainResult:
    store: ParamStore
    tasks: list[TaskParams]
    history: list[TrainLogRow]
    env_steps: int
    train_steps: int
    best_probe: float = float("nan")
    best_iteration: int = -1


def _adaptation_probe(store: ParamStore, cfg: PearlConfig, tasks, env_cfg,
                      rng: np.random.Generator) -> tuple[float, int]:
    """Few-trial adaptation score on validation tasks (selection signal).

    Returns (mean success over the latter half of the probe trials, env
    steps consumed).
    """
    scores = []
    steps = 0
    for task in tasks:
        env = InsertionEnv(task, env_cfg, reward="sparse")
        res = adapt(store, cfg, env, cfg.probe_trials, rng)
        half = cfg.probe_trials // 2
        scores.append(np.mean(res.successes[half:]))
        steps += cfg.probe_trials * env_cfg.horizon
    return float(np.mean(scores)), steps


def checkpoint_meta(cfg: PearlConfig, kind: str, seed: int, env_steps: int,
                    train_steps: int) -> dict:
    sac = cfg.sac
    return {
        "kind": kind,
        "seed": seed,
        "env_steps": env_steps,
        "train_steps": train_steps,
        "latent_dim": cfg.latent_dim,
        "kl_weight": cfg.kl_weight,
        "sac": {
            "discount": sac.discount, "tau": sac.tau,
            "entropy_weight": sac.entropy_weight, "batch_size": sac.batch_size,
            "lr_encoder": sac.lr_encoder, "lr_actor": sac.lr_actor,
            "lr_critic": sac.lr_critic, "hidden_dims": list(sac.hidden_dims),
            "max_action": sac.max_action, "obs_scale": sac.obs_scale,
            "act_scale": sac.act_scale,
            "reward_scale_dense": sac.reward_scale_dense,
            "reward_scale_sparse": sac.reward_scale_sparse,
        },
    }


def config_from_meta(meta: dict) -> PearlConfig:
    sac_meta = dict(meta["sac"])
    sac_meta["hidden_dims"] = tuple(sac_meta["hidden_dims"])
    return PearlConfig(latent_dim=meta["latent_dim"],
                       kl_weight=meta.get("kl_weight", 1.0),
                       sac=SacConfig(**sac_meta))


def meta_train(family: TaskFamily, cfg: PearlConfig, seed: int,
               checkpoint_path=None, max_env_steps: int | None = None,
               progress=None) -> MetaTrainResult:
    """Alternate data collection and optimization over the simulated family.

    Per collection phase each visited task starts from an empty context; the
    first of the K rollouts therefore runs under a prior latent and the rest
    under posteriors over the freshly gathered tuples. Optimization samples
    a task batch per step and applies the three-way gradient update.
    """
    family.validate()
    if cfg.num_tasks < 2:
        raise ValueError("meta-training needs at least two tasks")
    ss = np.random.SeedSequence(seed)
    init_ss, task_ss, collect_ss, train_ss, eval_ss = ss.spawn(5)
    rng_tasks = np.random.default_rng(task_ss)
    rng_collect = np.random.default_rng(collect_ss)
    rng_train = np.random.default_rng(train_ss)
    rng_eval = np.random.default_rng(eval_ss)

    task_seeds = rng_tasks.integers(0, 2 ** 62, size=cfg.num_tasks + cfg.probe_tasks)
    tasks = [sample_task(int(s), family, task_id=i)
             for i, s in enumerate(task_seeds[: cfg.num_tasks])]
    validation_tasks = [sample_task(int(s), family, task_id=10_000 + i)
                        for i, s in enumerate(task_seeds[cfg.num_tasks:])]
    env_cfg = family.env_config()
    envs = [InsertionEnv(t, env_cfg, reward="dense") for t in tasks]
    buffers = [ReplayBuffer(cfg.sac.buffer_capacity) for _ in tasks]
    store = init_params(cfg.sac, cfg.latent_dim, int(init_ss.generate_state(1)[0]))

    def provider(gp: GraphParams, tid: int, rng: np.random.Generator):
        n = cfg.context_batch
        if cfg.context_batch_min is not None:
            n = int(rng.integers(cfg.context_batch_min, cfg.context_batch + 1))
        rows = context_rows_from_batch(buffers[tid].sample_recent(n, rng))
        return encode_posterior_t(gp, cfg, rows, rng.standard_normal(cfg.latent_dim))

    result = MetaTrainResult(store, tasks, [], 0, 0)
    best_snapshot = None
    diag = {"critic_loss": float("nan"), "actor_loss": float("nan")}
    for iteration in range(cfg.iterations):
        if cfg.tasks_per_collect is None or iteration == 0:
            collect_ids = range(cfg.num_tasks)
        else:
            start = (iteration * cfg.tasks_per_collect) % cfg.num_tasks
            collect_ids = [(start + j) % cfg.num_tasks
                           for j in range(cfg.tasks_per_collect)]
        for tid in collect_ids:
            buffers[tid].begin_segment()
            context = ContextBatch.empty()
            for _ in range(cfg.k_collect):
                episode, context = collect_rollout(store, cfg, envs[tid], context,
                                                   True, rng_collect)
                buffers[tid].add_episode(episode.transitions, tasks[tid])
                result.env_steps += episode.steps
        for _ in range(cfg.steps_per_iter):
            ids = rng_train.choice(cfg.num_tasks,
                                   size=min(cfg.meta_batch, cfg.num_tasks),
                                   replace=False)
            diag = train_step(store, buffers, [int(i) for i in ids], cfg.sac,
                              rng_train, reward="dense",
                              latent_dim=cfg.latent_dim, context_provider=provider)
            result.train_steps += 1
        if cfg.select_best and (iteration + 1) % cfg.probe_every == 0:
            score, spent = _adaptation_probe(store, cfg, validation_tasks,
                                             env_cfg, rng_eval)
            result.env_steps += spent
            if not (score <= result.best_probe):  # best_probe starts as NaN
                result.best_probe = score
                result.best_iteration = iteration + 1
                best_snapshot = store.clone()
        if (iteration + 1) % cfg.eval_every == 0 or iteration + 1 == cfg.iterations:
            probe = min(5, cfg.num_tasks)
            rates = []
            rets = []
            for tid in range(probe):
                rate, ret = eval_success(store, cfg.sac, tasks[tid], env_cfg, 2,
                                         rng_eval, latent_dim=cfg.latent_dim,
                                         z=np.zeros(cfg.latent_dim), stochastic=True)
                rates.append(rate)
                rets.append(ret)
            result.history.append(TrainLogRow(
                result.env_steps, result.train_steps, float(np.mean(rets)),
                float(np.mean(rates)), diag["critic_loss"], diag["actor_loss"]))
            if progress is not None:
                progress(iteration + 1, result)
        if max_env_steps is not None and result.env_steps >= max_env_steps:
            break
    if best_snapshot is not None:
        result.store = best_snapshot
    if checkpoint_path is not None:
        save_checkpoint(result.store, checkpoint_path,
                        checkpoint_meta(cfg, "pearl", seed, result.env_steps,
                                        result.train_steps))
    return result
