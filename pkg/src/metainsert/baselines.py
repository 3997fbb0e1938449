"""Scripted insertion strategies: straight-down, random search, spiral
search. The search strategies probe candidate points above the assumed goal
and treat a vertical contact force at the threshold as a blocked descent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import InsertionEnv
from .rollout import EpisodeResult, run_episode


@dataclass(frozen=True)
class SearchConfig:
    square_side: float = 6e-3
    force_threshold: float = 3.0
    spiral_radius_per_rotation: float = 0.5e-3
    spiral_angle_step_deg: float = 45.0
    max_points: int = 50
    move_tolerance: float = 5e-5
    max_env_steps: int = 1200

    def __post_init__(self):
        if min(self.square_side, self.force_threshold,
               self.spiral_radius_per_rotation, self.spiral_angle_step_deg) <= 0:
            raise ValueError("search parameters must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")


def spiral_points(cfg: SearchConfig, center=(0.0, 0.0)) -> np.ndarray:
    """Points along an Archimedean spiral above the assumed goal.

    Point k sits at angle k * angle_step with the radius growing by the
    configured pitch once per full rotation.
    """
    per_rotation = 360.0 / cfg.spiral_angle_step_deg
    k = np.arange(cfg.max_points)
    radius = (k / per_rotation) * cfg.spiral_radius_per_rotation
    angle = np.deg2rad(k * cfg.spiral_angle_step_deg)
    pts = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return pts + np.asarray(center)


def random_points(cfg: SearchConfig, rng: np.random.Generator,
                  n: int | None = None, center=(0.0, 0.0)) -> np.ndarray:
    """I.i.d. uniform points on the square search region."""
    n = cfg.max_points if n is None else n
    half = 0.5 * cfg.square_side
    return rng.uniform(-half, half, size=(n, 2)) + np.asarray(center)


class StraightDownPolicy:
    """Full-speed descent from the reset position."""

    def __init__(self, max_action: float = 2e-3):
        self.max_action = max_action

    def begin(self, rng) -> None:
        pass

    def act(self, obs, prev_force) -> np.ndarray:
        return np.array([0.0, 0.0, -self.max_action])


class SearchPolicy:
    """Descend at each candidate point until contact or success.

    On contact (force at threshold) the effector backs up until the force
    drops, moves horizontally to the next point, and descends again. Returns
    ``None`` once the points are exhausted.
    """

    def __init__(self, points: np.ndarray, cfg: SearchConfig,
                 max_action: float = 2e-3):
        if len(points) == 0:
            raise ValueError("need at least one search point")
        self.points = np.asarray(points, dtype=np.float64)
        self.cfg = cfg
        self.max_action = max_action

    def begin(self, rng) -> None:
        self.index = 0
        self.mode = "move"

    def act(self, obs, prev_force) -> np.ndarray | None:
        if self.mode == "descend":
            if prev_force >= self.cfg.force_threshold:
                self.index += 1
                if self.index >= len(self.points):
                    return None
                self.mode = "ascend"
                return np.array([0.0, 0.0, self.max_action])
            return np.array([0.0, 0.0, -self.max_action])
        if self.mode == "ascend":
            if prev_force >= self.cfg.force_threshold:
                return np.array([0.0, 0.0, self.max_action])
            self.mode = "move"
        # move horizontally toward the current point, then descend
        d = self.points[self.index] - np.asarray(obs[:2])
        if np.abs(d).max() <= self.cfg.move_tolerance:
            self.mode = "descend"
            return np.array([0.0, 0.0, -self.max_action])
        step = np.clip(d, -self.max_action, self.max_action)
        return np.array([step[0], step[1], 0.0])


def straight_down(env: InsertionEnv, rng: np.random.Generator) -> EpisodeResult:
    return run_episode(env, StraightDownPolicy(env.config.max_step), rng,
                       record=True, stop_on_success=True)


def search_execute(env: InsertionEnv, points: np.ndarray, cfg: SearchConfig,
                   rng: np.random.Generator) -> EpisodeResult:
    """Run the contact-probing state machine over the given points.

    The episode budget is the environment horizon (search episodes use a
    longer horizon than learned 50-step trials; both budgets are reported).
    """
    policy = SearchPolicy(points, cfg, env.config.max_step)
    return run_episode(env, policy, rng, record=True, stop_on_success=True)
