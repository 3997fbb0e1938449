"""Off-policy actor-critic backbone used both as the meta-learner's inner RL
algorithm and as the "RL from scratch" baseline.

Two critics with a min-target are kept for stability. The single shared
update routine takes one gradient step per parameter group, summed over the
sampled tasks, using distinct learning rates for the encoder, the actor and
the critics, and finishes with a Polyak target update.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import EnvConfig, EnvState, InsertionEnv, TaskParams, reward_dense, reward_sparse
from .nn import (GraphParams, MlpSpec, ParamStore, adam_step, backward_into,
                 gaussian_head_np, gaussian_head_t, gaussian_sample,
                 gaussian_sample_t, init_mlp, mlp_forward, mlp_forward_np)
from .rollout import LearnedPolicy, UniformRandomPolicy, run_episode

OBS_DIM = 3
ACT_DIM = 3


@dataclass(frozen=True)
class SacConfig:
    discount: float = 0.99
    tau: float = 0.005
    entropy_weight: float = 0.1
    batch_size: int = 128
    lr_encoder: float = 3e-4
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    hidden_dims: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    max_action: float = 2e-3
    obs_scale: float = 200.0
    act_scale: float = 500.0
    reward_scale_dense: float = 100.0
    reward_scale_sparse: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


def sac_config_from_kv(kv: dict[str, str]) -> SacConfig:
    from .config import get_float, get_int

    base = SacConfig()
    hidden = tuple(int(h) for h in kv.get("hidden_dims", "64,64").split(","))
    return SacConfig(
        discount=get_float(kv, "discount", base.discount),
        tau=get_float(kv, "tau", base.tau),
        entropy_weight=get_float(kv, "entropy_weight", base.entropy_weight),
        batch_size=get_int(kv, "batch_size", base.batch_size),
        lr_encoder=get_float(kv, "lr_encoder", base.lr_encoder),
        lr_actor=get_float(kv, "lr_actor", base.lr_actor),
        lr_critic=get_float(kv, "lr_critic", base.lr_critic),
        hidden_dims=hidden,
        buffer_capacity=get_int(kv, "buffer_capacity", base.buffer_capacity),
        max_action=get_float(kv, "max_action", base.max_action),
        obs_scale=get_float(kv, "obs_scale", base.obs_scale),
        act_scale=get_float(kv, "act_scale", base.act_scale),
        reward_scale_dense=get_float(kv, "reward_scale_dense", base.reward_scale_dense),
        reward_scale_sparse=get_float(kv, "reward_scale_sparse",
                                      base.reward_scale_sparse),
    )


def actor_spec(cfg: SacConfig, latent_dim: int) -> MlpSpec:
    return MlpSpec(OBS_DIM + latent_dim, cfg.hidden_dims, 2 * ACT_DIM)


def critic_spec(cfg: SacConfig, latent_dim: int) -> MlpSpec:
    return MlpSpec(OBS_DIM + ACT_DIM + latent_dim, cfg.hidden_dims, 1)


def encoder_spec(cfg: SacConfig, latent_dim: int) -> MlpSpec:
    return MlpSpec(2 * OBS_DIM + ACT_DIM + 1, cfg.hidden_dims, 2 * latent_dim)


def init_params(cfg: SacConfig, latent_dim: int, seed: int) -> ParamStore:
    """Actor, double critics with target twins, and (if latent) an encoder."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_mlp(store, "actor", actor_spec(cfg, latent_dim), rng)
    init_mlp(store, "critic1", critic_spec(cfg, latent_dim), rng)
    init_mlp(store, "critic2", critic_spec(cfg, latent_dim), rng)
    init_mlp(store, "target1", critic_spec(cfg, latent_dim), rng)
    init_mlp(store, "target2", critic_spec(cfg, latent_dim), rng)
    store.copy_values("critic1", "target1")
    store.copy_values("critic2", "target2")
    if latent_dim > 0:
        init_mlp(store, "encoder", encoder_spec(cfg, latent_dim), rng)
    return store


class ReplayBuffer:
    """Ring buffer of transitions with both reward variants stored.

    ``begin_segment`` marks the start of a collection phase so recency-based
    context sampling can draw from the freshest data only.
    """

    COLS = ("s", "a", "r_dense", "r_sparse", "s_next", "done")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.count = 0
        self._segment_start = 0
        self.s = np.zeros((capacity, OBS_DIM))
        self.a = np.zeros((capacity, ACT_DIM))
        self.r_dense = np.zeros(capacity)
        self.r_sparse = np.zeros(capacity)
        self.s_next = np.zeros((capacity, OBS_DIM))
        self.done = np.zeros(capacity)

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def begin_segment(self) -> None:
        self._segment_start = self.count

    @property
    def segment_size(self) -> int:
        return min(self.count - self._segment_start, len(self))

    def add(self, s, a, r_dense, r_sparse, s_next, done) -> None:
        i = self.count % self.capacity
        self.s[i] = s
        self.a[i] = a
        self.r_dense[i] = r_dense
        self.r_sparse[i] = r_sparse
        self.s_next[i] = s_next
        self.done[i] = float(done)
        self.count += 1

    def add_episode(self, transitions, task: TaskParams) -> None:
        for tr in transitions:
            nxt = EnvState(pos=tr.s_next, steps_elapsed=0)
            self.add(tr.s, tr.a, reward_dense(nxt, task), reward_sparse(nxt, task),
                     tr.s_next, tr.done)

    def _gather(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {
            "s": self.s[idx], "a": self.a[idx], "r_dense": self.r_dense[idx],
            "r_sparse": self.r_sparse[idx], "s_next": self.s_next[idx],
            "done": self.done[idx],
        }

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        size = len(self)
        if size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self._gather(rng.integers(0, size, size=n))

    def sample_recent(self, n: int, rng: np.random.Generator,
                      window: int | None = None) -> dict[str, np.ndarray]:
        window = self.segment_size if window is None else min(window, len(self))
        if window < 1:
            raise ValueError("no recent segment to sample from")
        offsets = rng.integers(0, window, size=n)
        idx = (self.count - 1 - offsets) % self.capacity
        return self._gather(idx)


def _critic_features_np(store, name, spec, s_scaled, a_scaled, z_row):
    parts = [s_scaled, a_scaled]
    if z_row is not None:
        parts.append(np.broadcast_to(z_row, (s_scaled.shape[0], z_row.shape[0])))
    return mlp_forward_np(store, name, spec, np.concatenate(parts, axis=1))


def _scaled_reward(batch: dict[str, np.ndarray], cfg: SacConfig, reward: str) -> np.ndarray:
    if reward == "dense":
        return batch["r_dense"] * cfg.reward_scale_dense
    return batch["r_sparse"] * cfg.reward_scale_sparse


def bellman_target(store: ParamStore, batch: dict[str, np.ndarray],
                   z_row: np.ndarray | None, cfg: SacConfig,
                   rng: np.random.Generator, reward: str,
                   latent_dim: int) -> np.ndarray:
    """Bootstrapped target, held constant w.r.t. differentiation.

    Uses a fresh squashed-Gaussian action at the next state and the
    elementwise minimum of the two target critics, minus the scaled policy
    entropy term.
    """
    n = batch["s"].shape[0]
    s2 = batch["s_next"] * cfg.obs_scale
    feats = s2 if z_row is None else np.concatenate(
        [s2, np.broadcast_to(z_row, (n, z_row.shape[0]))], axis=1)
    head = gaussian_head_np(mlp_forward_np(store, "actor", actor_spec(cfg, latent_dim), feats))
    noise = rng.standard_normal(head.mean.shape)
    _, a2, logp2 = gaussian_sample(head, noise, cfg.max_action)
    cspec = critic_spec(cfg, latent_dim)
    q1 = _critic_features_np(store, "target1", cspec, s2, a2 * cfg.act_scale, z_row)[:, 0]
    q2 = _critic_features_np(store, "target2", cspec, s2, a2 * cfg.act_scale, z_row)[:, 0]
    soft_value = np.minimum(q1, q2) - cfg.entropy_weight * logp2
    y = _scaled_reward(batch, cfg, reward) + cfg.discount * (1.0 - batch["done"]) * soft_value
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite Bellman target")
    return y


def critic_loss(gp: GraphParams, batch: dict[str, np.ndarray],
                z_t: Tensor | None, cfg: SacConfig, rng: np.random.Generator,
                reward: str, latent_dim: int,
                target: np.ndarray | None = None) -> Tensor:
    """Mean squared Bellman error, summed over both critics.

    Gradients flow into the critic weights and, when a taped latent is
    supplied, through the latent into the encoder. The bootstrap target is
    treated as a constant; pass one explicitly for reproducible probes.
    """
    if batch["s"].shape[0] == 0:
        raise ValueError("empty batch")
    n = batch["s"].shape[0]
    y = target if target is not None else bellman_target(
        gp.store, batch, None if z_t is None else z_t.value[0],
        cfg, rng, reward, latent_dim)
    parts = [Tensor(batch["s"] * cfg.obs_scale), Tensor(batch["a"] * cfg.act_scale)]
    if z_t is not None:
        parts.append(ad.broadcast_rows(z_t, n))
    feats = ad.concat_cols(parts)
    cspec = critic_spec(cfg, latent_dim)
    y_t = Tensor(y[:, None])
    q1 = mlp_forward(gp, "critic1", cspec, feats)
    q2 = mlp_forward(gp, "critic2", cspec, feats)
    return ad.add(ad.mean_all(ad.square(ad.sub(q1, y_t))),
                  ad.mean_all(ad.square(ad.sub(q2, y_t))))


def actor_loss(gp: GraphParams, batch: dict[str, np.ndarray],
               z_row: np.ndarray | None, cfg: SacConfig,
               rng: np.random.Generator, latent_dim: int,
               noise: np.ndarray | None = None) -> Tensor:
    """Entropy-regularized policy loss with reparameterized actions.

    The latent and the bootstrap targets are fixed inputs here; only the
    actor is meant to be updated from this loss (the critics participate in
    the graph solely to route gradient through the fresh action).
    """
    if batch["s"].shape[0] == 0:
        raise ValueError("empty batch")
    n = batch["s"].shape[0]
    s_scaled = Tensor(batch["s"] * cfg.obs_scale)
    parts = [s_scaled]
    if z_row is not None:
        parts.append(Tensor(np.broadcast_to(z_row, (n, z_row.shape[0])).copy()))
    out = mlp_forward(gp, "actor", actor_spec(cfg, latent_dim), ad.concat_cols(parts))
    mean, log_std = gaussian_head_t(out, ACT_DIM)
    if noise is None:
        noise = rng.standard_normal((n, ACT_DIM))
    _, action, logp = gaussian_sample_t(mean, log_std, noise, cfg.max_action)
    qparts = [s_scaled, ad.mul(action, cfg.act_scale)]
    if z_row is not None:
        qparts.append(Tensor(np.broadcast_to(z_row, (n, z_row.shape[0])).copy()))
    qfeats = ad.concat_cols(qparts)
    cspec = critic_spec(cfg, latent_dim)
    q1 = mlp_forward(gp, "critic1", cspec, qfeats)
    q2 = mlp_forward(gp, "critic2", cspec, qfeats)
    qmin = ad.minimum(q1, q2)
    return ad.mean_all(ad.sub(ad.mul(logp, cfg.entropy_weight), qmin))


def target_update(store: ParamStore, tau: float) -> None:
    """Polyak averaging: target <- tau * online + (1 - tau) * target."""
    for online, target in (("critic1", "target1"), ("critic2", "target2")):
        for name in store.names(online):
            tname = target + name[len(online):]
            tv = store.value(tname)
            tv[...] = tau * store.value(name) + (1.0 - tau) * tv


def _tsum(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ad.add(total, t)
    return total


def train_step(store: ParamStore, buffers: list[ReplayBuffer], task_ids,
               cfg: SacConfig, rng: np.random.Generator, reward: str = "dense",
               latent_dim: int = 0, context_provider=None) -> dict[str, float]:
    """One gradient step on each parameter group, summed over sampled tasks.

    ``context_provider(gp, task_id, rng)`` returns a taped latent sample and
    a taped KL penalty for the task, or ``(None, None)`` when no encoder is
    in play. The encoder is stepped with the critic + KL gradient, the actor
    with its own loss, the critics with the critic loss; then the targets
    are smoothed.
    """
    for tid in task_ids:
        if len(buffers[tid]) < cfg.batch_size:
            raise ValueError(f"buffer {tid} underfilled: {len(buffers[tid])}")
    store.zero_grads()

    gp_a = GraphParams(store)
    batches: dict[int, dict[str, np.ndarray]] = {}
    z_rows: dict[int, np.ndarray | None] = {}
    losses_a: list[Tensor] = []
    kl_total = 0.0
    for tid in task_ids:
        batch = buffers[tid].sample(cfg.batch_size, rng)
        batches[tid] = batch
        if context_provider is not None:
            z_t, kl_t = context_provider(gp_a, tid, rng)
        else:
            z_t, kl_t = None, None
        z_rows[tid] = None if z_t is None else z_t.value[0].copy()
        lc = critic_loss(gp_a, batch, z_t, cfg, rng, reward, latent_dim)
        if kl_t is not None:
            kl_total += float(kl_t.value)
            lc = ad.add(lc, kl_t)
        losses_a.append(lc)
    loss_a = _tsum(losses_a)
    backward_into(loss_a, gp_a, prefixes=("encoder", "critic1", "critic2"))

    gp_b = GraphParams(store)
    loss_b = _tsum([
        actor_loss(gp_b, batches[tid], z_rows[tid], cfg, rng, latent_dim)
        for tid in task_ids
    ])
    backward_into(loss_b, gp_b, prefixes=("actor",))

    if latent_dim > 0:
        adam_step(store, cfg.lr_encoder, cfg.adam_betas, cfg.adam_eps, prefix="encoder")
    adam_step(store, cfg.lr_actor, cfg.adam_betas, cfg.adam_eps, prefix="actor")
    adam_step(store, cfg.lr_critic, cfg.adam_betas, cfg.adam_eps, prefix="critic1")
    adam_step(store, cfg.lr_critic, cfg.adam_betas, cfg.adam_eps, prefix="critic2")
    target_update(store, cfg.tau)

    diag = {
        "critic_loss": float(loss_a.value) - kl_total,
        "kl_loss": kl_total,
        "actor_loss": float(loss_b.value),
    }
    if not all(np.isfinite(v) for v in diag.values()):
        raise ValueError(f"non-finite training diagnostics: {diag}")
    return diag


@dataclass
class TrainLogRow:
    env_steps: int
    train_steps: int
    mean_return: float
    success_rate: float
    critic_loss: float
    actor_loss: float

    HEADER = "env_steps,train_steps,mean_return,success_rate,critic_loss,actor_loss"

    def csv(self) -> str:
        return (f"{self.env_steps},{self.train_steps},{self.mean_return!r},"
                f"{self.success_rate!r},{self.critic_loss!r},{self.actor_loss!r}")


def eval_success(store: ParamStore, cfg: SacConfig, task: TaskParams,
                 env_cfg: EnvConfig, episodes: int, rng: np.random.Generator,
                 latent_dim: int = 0, z: np.ndarray | None = None,
                 stochastic: bool = False) -> tuple[float, float]:
    """Success rate and mean final reward over fresh rollouts."""
    env = InsertionEnv(task, env_cfg, reward="sparse")
    policy = LearnedPolicy(store, actor_spec(cfg, latent_dim), cfg.obs_scale,
                           cfg.max_action, z=z, stochastic=stochastic)
    wins = 0
    returns = 0.0
    for _ in range(episodes):
        res = run_episode(env, policy, rng)
        wins += int(res.success)
        returns += res.final_reward
    return wins / episodes, returns / episodes


@dataclass
class SacTrainResult:
    store: ParamStore
    history: list[TrainLogRow] = field(default_factory=list)
    env_steps: int = 0
    train_steps: int = 0


def sac_train(task: TaskParams, cfg: SacConfig, env_cfg: EnvConfig,
              total_env_steps: int, seed: int, reward: str = "sparse",
              warmup_episodes: int = 200, updates_per_step: float = 0.5,
              eval_every_episodes: int = 200,
              eval_episodes: int = 10) -> SacTrainResult:
    """Train a single-task agent from scratch (the comparison baseline)."""
    ss = np.random.SeedSequence(seed)
    init_seed, collect_ss, train_ss, eval_ss = ss.spawn(4)
    rng_collect = np.random.default_rng(collect_ss)
    rng_train = np.random.default_rng(train_ss)
    rng_eval = np.random.default_rng(eval_ss)

    store = init_params(cfg, 0, int(init_seed.generate_state(1)[0]))
    buffer = ReplayBuffer(cfg.buffer_capacity)
    env = InsertionEnv(task, env_cfg, reward=reward)
    policy = LearnedPolicy(store, actor_spec(cfg, 0), cfg.obs_scale, cfg.max_action,
                           stochastic=True)
    warmup = UniformRandomPolicy(cfg.max_action)

    result = SacTrainResult(store)
    update_debt = 0.0
    episode = 0
    while result.env_steps < total_env_steps:
        actor = warmup if episode < warmup_episodes else policy
        res = run_episode(env, actor, rng_collect, record=True)
        buffer.add_episode(res.transitions, task)
        result.env_steps += res.steps
        episode += 1
        if episode >= warmup_episodes and len(buffer) >= cfg.batch_size:
            update_debt += res.steps * updates_per_step
            diag = {"critic_loss": float("nan"), "actor_loss": float("nan")}
            while update_debt >= 1.0:
                diag = train_step(store, [buffer], [0], cfg, rng_train, reward=reward)
                result.train_steps += 1
                update_debt -= 1.0
            if episode % eval_every_episodes == 0:
                rate, ret = eval_success(store, cfg, task, env_cfg, eval_episodes,
                                         rng_eval)
                result.history.append(TrainLogRow(
                    result.env_steps, result.train_steps, ret, rate,
                    diag.get("critic_loss", float("nan")),
                    diag.get("actor_loss", float("nan"))))
    return result
