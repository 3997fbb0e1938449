"""Shared episode driver.

Every policy (scripted search, SAC, PEARL) runs through ``run_episode`` so
step budgets, success detection and the insertion-time metric are one code
path. Policies are duck typed: ``begin(rng)`` starts an episode and
``act(obs, prev_force) -> delta | None`` produces the next displacement
(``None`` ends the episode early, e.g. when a search exhausts its points).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import InsertionEnv, Transition
from .nn import MlpSpec, ParamStore, gaussian_head_np, gaussian_sample, mlp_forward_np

CONTACT_EVENT_FORCE = 3.0


@dataclass
class EpisodeResult:
    """Uniform per-episode record shared by scripted and learned policies."""

    success: bool
    steps: int
    insertion_steps: int | None
    insertion_seconds: float | None
    contact_events: int
    final_reward: float
    transitions: list[Transition] = field(default_factory=list)


def run_episode(env: InsertionEnv, policy, rng: np.random.Generator,
                record: bool = False, stop_on_success: bool = False) -> EpisodeResult:
    """Roll one episode and compute the insertion-time metric.

    Insertion steps count from the first state below the hole lip to the
    first state at success depth, inclusive; seconds divide the path length
    over that segment by the nominal step velocity.
    """
    obs = env.reset(rng)
    policy.begin(rng)
    prev_force = 0.0
    transitions: list[Transition] = []
    tip_step = None
    success_step = None
    path_len = 0.0
    steps = 0
    contact_events = 0
    final_reward = 0.0
    while not env.done:
        delta = policy.act(obs, prev_force)
        if delta is None:
            break
        tr = env.step(delta)
        steps += 1
        final_reward = tr.r
        if record:
            transitions.append(tr)
        if tr.s_next[2] < 0.0 and tip_step is None:
            tip_step = steps
        if tip_step is not None and success_step is None:
            path_len += float(np.linalg.norm(tr.s_next - tr.s))
        if success_step is None and env.success():
            success_step = steps
        if tr.contact_force_z >= CONTACT_EVENT_FORCE:
            contact_events += 1
        prev_force = tr.contact_force_z
        obs = tr.s_next
        if stop_on_success and success_step is not None:
            break
    insertion_steps = None
    insertion_seconds = None
    if env.success() and tip_step is not None and success_step is not None:
        insertion_steps = success_step - tip_step + 1
        insertion_seconds = path_len / env.config.step_velocity
    return EpisodeResult(
        success=env.success(),
        steps=steps,
        insertion_steps=insertion_steps,
        insertion_seconds=insertion_seconds,
        contact_events=contact_events,
        final_reward=final_reward,
        transitions=transitions,
    )


@dataclass
class LearnedPolicy:
    """Feeds scaled observations (and an optional latent) through an actor MLP."""

    store: ParamStore
    spec: MlpSpec
    obs_scale: float
    max_action: float
    z: np.ndarray | None = None
    stochastic: bool = True
    prefix: str = "actor"

    def begin(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def features(self, obs: np.ndarray) -> np.ndarray:
        x = np.asarray(obs, dtype=np.float64) * self.obs_scale
        if self.z is not None:
            x = np.concatenate([x, self.z])
        return x

    def act(self, obs: np.ndarray, prev_force: float) -> np.ndarray:
        head = gaussian_head_np(
            mlp_forward_np(self.store, self.prefix, self.spec, self.features(obs)))
        if self.stochastic:
            noise = self._rng.standard_normal(head.mean.shape[0])
        else:
            noise = np.zeros(head.mean.shape[0])
        _, action, _ = gaussian_sample(head, noise, self.max_action)
        return action


class UniformRandomPolicy:
    """Warmup exploration: uniform displacements inside the step bound."""

    def __init__(self, max_action: float):
        self.max_action = max_action

    def begin(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, obs: np.ndarray, prev_force: float) -> np.ndarray:
        return self._rng.uniform(-self.max_action, self.max_action, size=3)
