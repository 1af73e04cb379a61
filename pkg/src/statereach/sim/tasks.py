"""The six movement tasks: rewards, termination and initial states."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .state import EnvSpec

TASK_IDS = ("default", "slow_walk", "run", "back_walk", "balance", "stand_up")

# desk-scale velocities; ``FULL_SCALE_TARGET_VELOCITIES`` keeps the MuJoCo-tuned ones
TARGET_VELOCITIES = {"slow_walk": 0.5, "run": 1.5, "back_walk": -0.5,
                     "balance": 0.0, "stand_up": 0.0}
FULL_SCALE_TARGET_VELOCITIES = {"slow_walk": 1.0, "run": 4.0, "back_walk": -1.0,
                           "balance": 0.0, "stand_up": 0.0}

DEFAULT_ACTION_COEF = 0.001
POSE_ACTION_COEF = 0.01


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    target_velocity: float
    episode_limit: float
    uses_termination: bool
    reward_subset: np.ndarray
    reward_target: np.ndarray
    # reward charged for each step lost to early termination
    fall_penalty: float = -5.0
    init_noise: float = 0.005
    init_seed: int = 0
    target_position: np.ndarray | None = field(default=None)

    def steps(self, control_period: float) -> int:
        return int(round(self.episode_limit / control_period))

    def with_target_position(self, pos) -> TaskSpec:
        return dataclasses.replace(self, target_position=np.asarray(pos, dtype=np.float64))


def make_task(spec: EnvSpec, task_id: str, **overrides) -> TaskSpec:
    """Build a task for ``spec``.

    ``reach`` is an extra point-mass task (target position tracking) used for
    MPC and PPO sanity runs; it is not part of the six-task suite.
    """
    if task_id not in TASK_IDS and task_id != "reach":
        raise ConfigError(f"unknown task_id {task_id!r}; expected one of {TASK_IDS}")
    layout = spec.layout
    velocities = overrides.pop("velocities", TARGET_VELOCITIES)
    target_velocity = float(overrides.pop("target_velocity", velocities.get(task_id, 0.0)))

    subset = np.concatenate([layout.root_vel, layout.joint_angles]).astype(int)
    target = spec.default_pose[subset].copy()
    target[: layout.n_root_pos] = 0.0
    target[0] = target_velocity

    kw = dict(
        task_id=task_id,
        target_velocity=target_velocity,
        episode_limit=10.0,
        uses_termination=spec.terminates and task_id != "stand_up",
        reward_subset=subset,
        reward_target=target,
    )
    if task_id == "reach":
        kw["uses_termination"] = False
        kw["target_position"] = np.zeros(layout.n_root_pos)
    kw.update(overrides)
    return TaskSpec(**kw)


def reward(state, next_state, action, task: TaskSpec, spec: EnvSpec) -> float:
    a = np.asarray(action, dtype=np.float64)
    if task.task_id == "default":
        return float(next_state[spec.forward_vel_index] - DEFAULT_ACTION_COEF * (a @ a))
    if task.task_id == "reach":
        pos = np.asarray(next_state)[spec.layout.root_pos]
        diff = pos - task.target_position
        return float(-(diff @ diff) - POSE_ACTION_COEF * (a @ a) / spec.action_dim)
    diff = np.asarray(next_state)[task.reward_subset] - task.reward_target
    return float(-(diff @ diff) - POSE_ACTION_COEF * (a @ a) / spec.action_dim)


def is_terminal(env, state, task: TaskSpec) -> bool:
    return bool(task.uses_termination and env.fallen(state))


def fallen_pose(env) -> np.ndarray:
    """Agent lying on the ground at rest (start state of ``stand_up``)."""
    spec = env.spec
    s = spec.default_pose.copy()
    if spec.has_ground:
        s[spec.layout.root_rot[0]] = np.pi / 2
        return env.place_at_height(s, 0.0)
    if spec.fallen_angle_index is not None:
        s[spec.fallen_angle_index] = np.pi
    return s


def initial_state(env, task: TaskSpec) -> np.ndarray:
    """Deterministic start state: default pose plus seeded uniform noise."""
    base = fallen_pose(env) if task.task_id == "stand_up" else env.spec.default_pose.copy()
    if task.init_noise <= 0.0:
        return base
    rng = np.random.default_rng(task.init_seed)
    noisy = base + rng.uniform(-task.init_noise, task.init_noise, size=base.shape)
    per = env.spec.periodic
    noisy[per] = (noisy[per] + np.pi) % (2 * np.pi) - np.pi
    if env.spec.has_ground:
        # keep the lowest point on the ground rather than inside it
        noisy = env.place_at_height(noisy, max(env.lowest_point(noisy), 0.0))
    return noisy
