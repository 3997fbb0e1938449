"""Deterministic geometric simulator for square-peg/square-hole insertion.

A task is one sampled insertion geometry plus calibration errors: a
horizontal offset between the true hole and the assumed (calibrated) goal,
a block side length setting the clearance, and a scaling error on the
position controller's step size.

Coordinates: the true hole center at lip height is the physical origin.
Observations are positions of the block bottom-face center relative to the
ASSUMED goal, so the observed position equals the true position plus the
goal offset. All lengths are meters.

Contact is resolved by a rigid axis-aligned decompose-and-clamp model:
the commanded horizontal displacement is applied first (clamped by the hole
walls while the block is below the lip), then the vertical displacement
(clamped by the table, or by the hole bottom when the footprint fits inside
the hole). A block partially overlapping the hole rests on the table; it
never tilts in. Blocked descent produces a vertical contact force linear in
the blocked distance.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import get_float, get_int, read_kv, write_kv

MM = 1e-3


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 50
    max_step: float = 2.0 * MM
    workspace_radius: float = 30.0 * MM
    workspace_height: float = 40.0 * MM
    contact_stiffness: float = 3000.0  # N/m: a fully blocked 1 mm step reads 3 N
    reset_cube_side: float = 5.0 * MM
    reset_height: float = 5.0 * MM
    step_velocity: float = 0.01  # m/s, converts insertion path length to seconds
    hole_depth: float = 20.0 * MM
    # Horizontal displacement of the reset cube center away from the true
    # goal; an uncorrected grasp error shifts the part here at reset.
    reset_shift: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.contact_stiffness <= 0:
            raise ValueError("contact_stiffness must be > 0")


@dataclass(frozen=True)
class TaskFamily:
    """Uniform ranges from which insertion tasks are drawn."""

    name: str
    offset_max: float
    block_side_min: float
    block_side_max: float
    hole_side: float
    step_scale_min: float
    step_scale_max: float
    success_depth: float
    horizon: int = 50
    contact_stiffness: float = 3000.0

    def validate(self) -> None:
        if self.block_side_min > self.block_side_max:
            raise ValueError("block_side_min > block_side_max")
        if self.step_scale_min > self.step_scale_max:
            raise ValueError("step_scale_min > step_scale_max")
        if self.offset_max < 0:
            raise ValueError("offset_max must be >= 0")
        if self.block_side_max >= self.hole_side:
            raise ValueError("block side must stay below the hole side")

    def env_config(self, **overrides) -> EnvConfig:
        cfg = EnvConfig(horizon=self.horizon, contact_stiffness=self.contact_stiffness)
        return replace(cfg, **overrides) if overrides else cfg

    def to_kv(self) -> dict:
        return {
            "offset_max_mm": self.offset_max / MM,
            "block_side_min_mm": self.block_side_min / MM,
            "block_side_max_mm": self.block_side_max / MM,
            "hole_side_mm": self.hole_side / MM,
            "step_scale_min": self.step_scale_min,
            "step_scale_max": self.step_scale_max,
            "success_depth_mm": self.success_depth / MM,
            "horizon": self.horizon,
            "contact_stiffness": self.contact_stiffness,
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str], name: str = "custom") -> "TaskFamily":
        fam = cls(
            name=name,
            offset_max=get_float(kv, "offset_max_mm") * MM,
            block_side_min=get_float(kv, "block_side_min_mm") * MM,
            block_side_max=get_float(kv, "block_side_max_mm") * MM,
            hole_side=get_float(kv, "hole_side_mm") * MM,
            step_scale_min=get_float(kv, "step_scale_min"),
            step_scale_max=get_float(kv, "step_scale_max"),
            success_depth=get_float(kv, "success_depth_mm") * MM,
            horizon=get_int(kv, "horizon", 50),
            contact_stiffness=get_float(kv, "contact_stiffness", 3000.0),
        )
        fam.validate()
        return fam

    def save(self, path) -> None:
        write_kv(path, self.to_kv())

    @classmethod
    def load(cls, path, name: str = "custom") -> "TaskFamily":
        return cls.from_kv(read_kv(path), name=name)


PLUG = TaskFamily("plug", offset_max=5 * MM, block_side_min=13 * MM,
                  block_side_max=14 * MM, hole_side=15 * MM,
                  step_scale_min=0.9, step_scale_max=1.1, success_depth=5 * MM)

# Only the relative difficulty of the gear use case is known: much tighter
# clearance and a deeper seating depth than the plug.
GEAR = TaskFamily("gear", offset_max=5 * MM, block_side_min=14.4 * MM,
                  block_side_max=14.7 * MM, hole_side=15 * MM,
                  step_scale_min=0.9, step_scale_max=1.1, success_depth=8 * MM)

FAMILIES = {"plug": PLUG, "gear": GEAR}


@dataclass(frozen=True)
class TaskParams:
    """One sampled insertion task."""

    goal_offset: tuple[float, float]  # true goal minus assumed goal, horizontal
    block_side: float
    step_scale: float
    hole_side: float
    success_depth: float
    task_id: int

    def __post_init__(self):
        if max(abs(self.goal_offset[0]), abs(self.goal_offset[1])) > 5 * MM + 1e-12:
            raise ValueError("goal offset components must stay within 5 mm")
        if self.hole_side <= self.block_side:
            raise ValueError("hole must be wider than the block")
        if not (0.9 - 1e-12 <= self.step_scale <= 1.1 + 1e-12):
            raise ValueError("step scale must lie in [0.9, 1.1]")

    @property
    def slack(self) -> float:
        """Per-axis lateral play of the block inside the hole."""
        return 0.5 * (self.hole_side - self.block_side)

    def to_kv(self) -> dict:
        return {
            "task_id": self.task_id,
            "goal_offset_x_mm": self.goal_offset[0] / MM,
            "goal_offset_y_mm": self.goal_offset[1] / MM,
            "block_side_mm": self.block_side / MM,
            "hole_side_mm": self.hole_side / MM,
            "step_scale": self.step_scale,
            "success_depth_mm": self.success_depth / MM,
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TaskParams":
        return cls(
            goal_offset=(get_float(kv, "goal_offset_x_mm") * MM,
                         get_float(kv, "goal_offset_y_mm") * MM),
            block_side=get_float(kv, "block_side_mm") * MM,
            step_scale=get_float(kv, "step_scale"),
            hole_side=get_float(kv, "hole_side_mm") * MM,
            success_depth=get_float(kv, "success_depth_mm") * MM,
            task_id=get_int(kv, "task_id"),
        )


@dataclass(frozen=True)
class EnvState:
    """Block bottom-face center relative to the assumed goal, plus step count."""

    pos: np.ndarray
    steps_elapsed: int

    @property
    def inserted(self) -> bool:
        return bool(self.pos[2] < 0.0)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    contact_force_z: float


def sample_task(rng_seed: int, family: TaskFamily, task_id: int | None = None) -> TaskParams:
    """Draw one task uniformly and independently per parameter."""
    family.validate()
    rng = np.random.default_rng(rng_seed)
    ox = rng.uniform(-family.offset_max, family.offset_max)
    oy = rng.uniform(-family.offset_max, family.offset_max)
    block = rng.uniform(family.block_side_min, family.block_side_max)
    scale = rng.uniform(family.step_scale_min, family.step_scale_max)
    return TaskParams(goal_offset=(ox, oy), block_side=block, step_scale=scale,
                      hole_side=family.hole_side, success_depth=family.success_depth,
                      task_id=rng_seed if task_id is None else task_id)


def _true_pos(state_pos: np.ndarray, task: TaskParams) -> np.ndarray:
    offset = np.array([task.goal_offset[0], task.goal_offset[1], 0.0])
    return state_pos - offset


def footprint_fits(px: float, py: float, task: TaskParams) -> bool:
    """Whether the block footprint at true position (px, py) lies inside the hole."""
    return abs(px) <= task.slack and abs(py) <= task.slack


def reset_state(task: TaskParams, rng: np.random.Generator,
                config: EnvConfig = EnvConfig()) -> EnvState:
    """Place the block uniformly in a cube above the true goal.

    The cube has side ``reset_cube_side`` and is centered ``reset_height``
    above the hole lip; the returned position is expressed relative to the
    assumed goal, so it is biased by the calibration error.
    """
    half = 0.5 * config.reset_cube_side
    u = rng.uniform(-half, half, size=3)
    true = np.array([config.reset_shift[0] + u[0], config.reset_shift[1] + u[1],
                     config.reset_height + u[2]])
    obs = true + np.array([task.goal_offset[0], task.goal_offset[1], 0.0])
    return EnvState(pos=obs, steps_elapsed=0)


def is_success(state: EnvState, task: TaskParams) -> bool:
    return bool(state.pos[2] <= -task.success_depth)


def reward_sparse(state: EnvState, task: TaskParams) -> float:
    return 1.0 if is_success(state, task) else 0.0


def reward_dense(state: EnvState, task: TaskParams) -> float:
    """Negative distance between the block and the fully inserted pose."""
    p = _true_pos(state.pos, task)
    target = np.array([0.0, 0.0, -task.success_depth])
    return -float(np.linalg.norm(p - target))


def step_state(state: EnvState, task: TaskParams, delta: np.ndarray,
               config: EnvConfig = EnvConfig(),
               reward: str = "dense") -> tuple[EnvState, Transition]:
    """Advance one control step.

    The commanded displacement is the action clamped to the per-axis step
    bound, scaled by the task's controller error. Once the block reaches the
    success depth it holds position for the rest of the trial while rewards
    keep accruing.
    """
    if state.steps_elapsed >= config.horizon:
        raise ValueError("episode exhausted: state is terminal")
    delta = np.asarray(delta, dtype=np.float64)
    obs_before = state.pos.copy()
    force = 0.0

    if is_success(state, task):
        new_pos = state.pos.copy()
    else:
        cmd = np.clip(delta, -config.max_step, config.max_step) * task.step_scale
        p = _true_pos(state.pos, task)

        # Horizontal motion, clamped by the hole walls while below the lip.
        if p[2] < 0.0:
            px = float(np.clip(p[0] + cmd[0], -task.slack, task.slack))
            py = float(np.clip(p[1] + cmd[1], -task.slack, task.slack))
        else:
            px = p[0] + cmd[0]
            py = p[1] + cmd[1]

        # Vertical motion, clamped by the hole bottom or the table surface.
        tz = p[2] + cmd[2]
        if cmd[2] < 0.0:
            floor = -config.hole_depth if footprint_fits(px, py, task) else min(0.0, p[2])
            pz = max(tz, floor)
            blocked = max(0.0, floor - tz)
            force = config.contact_stiffness * blocked
        else:
            pz = tz

        new_pos = np.array([px, py, pz]) + np.array(
            [task.goal_offset[0], task.goal_offset[1], 0.0])

        # Workspace cylinder (centered at the assumed goal): push back inside,
        # perpendicular to the nearest surface.
        radius = float(np.hypot(new_pos[0], new_pos[1]))
        if radius > config.workspace_radius:
            new_pos[:2] *= config.workspace_radius / radius
        half_h = 0.5 * config.workspace_height
        new_pos[2] = float(np.clip(new_pos[2], -half_h, half_h))

    new_state = EnvState(pos=new_pos, steps_elapsed=state.steps_elapsed + 1)
    r = reward_sparse(new_state, task) if reward == "sparse" else reward_dense(new_state, task)
    # The MDP has no terminal state: trials end by truncation at the horizon
    # and a successful insertion becomes absorbing while rewards accrue, so
    # transitions never carry done=True and value bootstrapping continues
    # through the episode cut.
    tr = Transition(s=obs_before, a=delta.copy(), r=r, s_next=new_pos.copy(),
                    done=False, contact_force_z=force)
    return new_state, tr


class InsertionEnv:
    """One rollout worker's environment instance.

    Owns its state and is deterministic: all randomness enters through the
    generator passed to ``reset``.
    """

    def __init__(self, task: TaskParams, config: EnvConfig = EnvConfig(),
                 reward: str = "dense"):
        if reward not in ("dense", "sparse"):
            raise ValueError(f"unknown reward mode {reward!r}")
        self.task = task
        self.config = config
        self.reward = reward
        self.state: EnvState | None = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = reset_state(self.task, rng, self.config)
        return self.state.pos.copy()

    def step(self, delta: np.ndarray) -> Transition:
        if self.state is None:
            raise ValueError("reset the environment before stepping")
        self.state, tr = step_state(self.state, self.task, delta, self.config,
                                    self.reward)
        return tr

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.steps_elapsed >= self.config.horizon

    def success(self) -> bool:
        return self.state is not None and is_success(self.state, self.task)
