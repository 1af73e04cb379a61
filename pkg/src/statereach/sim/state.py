"""State containers shared by every module.

States travel through the system as flat float64 vectors laid out as
generalized coordinates followed by generalized velocities:

    root_pos, root_rot, joint_angles, root_vel, root_angvel, joint_angvels

:class:`SimState` is the structured view of such a vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StateLayout:
    n_root_pos: int
    n_root_rot: int
    n_joints: int

    @property
    def n_coords(self) -> int:
        return self.n_root_pos + self.n_root_rot + self.n_joints

    @property
    def dim(self) -> int:
        return 2 * self.n_coords

    def _span(self, start, n):
        return np.arange(start, start + n)

    @property
    def root_pos(self):
        return self._span(0, self.n_root_pos)

    @property
    def root_rot(self):
        return self._span(self.n_root_pos, self.n_root_rot)

    @property
    def joint_angles(self):
        return self._span(self.n_root_pos + self.n_root_rot, self.n_joints)

    @property
    def root_vel(self):
        return self._span(self.n_coords, self.n_root_pos)

    @property
    def root_angvel(self):
        return self._span(self.n_coords + self.n_root_pos, self.n_root_rot)

    @property
    def joint_angvels(self):
        return self._span(self.n_coords + self.n_root_pos + self.n_root_rot, self.n_joints)


@dataclass(frozen=True)
class SimState:
    root_pos: np.ndarray
    root_rot: np.ndarray
    joint_angles: np.ndarray
    root_vel: np.ndarray
    root_angvel: np.ndarray
    joint_angvels: np.ndarray

    @classmethod
    def from_vector(cls, vec, layout: StateLayout) -> SimState:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (layout.dim,):
            raise ValueError(f"expected state of dim {layout.dim}, got shape {vec.shape}")
        return cls(
            root_pos=vec[layout.root_pos].copy(),
            root_rot=vec[layout.root_rot].copy(),
            joint_angles=vec[layout.joint_angles].copy(),
            root_vel=vec[layout.root_vel].copy(),
            root_angvel=vec[layout.root_angvel].copy(),
            joint_angvels=vec[layout.joint_angvels].copy(),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.root_pos, self.root_rot, self.joint_angles,
             self.root_vel, self.root_angvel, self.joint_angvels]
        ).astype(np.float64)


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    layout: StateLayout
    state_names: tuple[str, ...]
    action_dim: int
    sim_dt: float
    action_repeat: int
    torque_bounds: np.ndarray  # (action_dim, 2)
    default_pose: np.ndarray
    # declared per-dimension caps; root entries feed StateRanges directly
    caps: np.ndarray  # (state_dim, 2)
    periodic: np.ndarray  # bool mask of wrapped angle dimensions
    fall_height_threshold: float | None
    upright_cone: float | None
    terminates: bool = True
    has_ground: bool = False
    fallen_angle_index: int | None = None
    calibrate_fixed_root: bool = True
    params: dict = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return self.layout.dim

    @property
    def control_period(self) -> float:
        return self.sim_dt * self.action_repeat

    @property
    def height_index(self) -> int | None:
        return 1 if self.has_ground else None

    @property
    def forward_vel_index(self) -> int:
        return int(self.layout.root_vel[0])


@dataclass(frozen=True)
class StateRanges:
    """Per-dimension [min, max] of every state variable.

    Joint rows come from calibration; root rows from the environment caps.
    """

    low: np.ndarray
    high: np.ndarray
    periodic: np.ndarray

    def __post_init__(self):
        if np.any(self.low > self.high):
            raise ValueError("StateRanges requires low <= high")

    @property
    def span(self) -> np.ndarray:
        return self.high - self.low

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.high + self.low)

    def scale(self) -> np.ndarray:
        """Half-spans, floored so constant dimensions stay usable as divisors."""
        return np.maximum(0.5 * self.span, 1e-6)

    def sample(self, rng) -> np.ndarray:
        return rng.uniform(self.low, self.high)

    def to_dict(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist(),
                "periodic": self.periodic.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d) -> StateRanges:
        return cls(np.asarray(d["low"], float), np.asarray(d["high"], float),
                   np.asarray(d["periodic"], bool))
