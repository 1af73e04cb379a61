"""Built-in planar agents.

``make_env`` is the only constructor callers should need.  Environment
parameters are plain floats keyed by name and can be overridden, which is
how calibration switches gravity off and welds the root.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, SimulationDiverged, UsageError
from . import dynamics as dyn
from .state import EnvSpec, SimState, StateLayout

SIM_DT = 0.01
ACTION_REPEAT = 10
ENV_IDS = ("point_mass", "pendulum_cart", "planar_hopper")


class Env:
    """A single-writer simulation handle holding the current state."""

    param_names: tuple[str, ...] = ()
    defaults: dict[str, float] = {}

    def __init__(self, overrides=None):
        params = dict(self.defaults)
        for key, value in (overrides or {}).items():
            if key not in params:
                raise ConfigError(f"{type(self).__name__}: unknown parameter {key!r}")
            params[key] = float(value)
        self.params = params
        self._pvec = np.array([params[k] for k in self.param_names], dtype=np.float64)
        self.spec = self._build_spec()
        self._state = self.spec.default_pose.copy()

    def _build_spec(self) -> EnvSpec:
        raise NotImplementedError

    def _kernel(self, q, v, tau):
        raise NotImplementedError

    @property
    def state_dim(self):
        return self.spec.state_dim

    def variant(self, **overrides) -> Env:
        merged = dict(self.params)
        merged.update(overrides)
        return type(self)(merged)

    def clamp_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        bounds = self.spec.torque_bounds
        return np.clip(a, bounds[:, 0], bounds[:, 1])

    def simulate(self, state, action) -> np.ndarray:
        """Pure successor function: returns the state one control period later."""
        state = np.asarray(state, dtype=np.float64)
        nq = self.spec.layout.n_coords
        q, v = self._kernel(state[:nq].copy(), state[nq:].copy(), self.clamp_action(action))
        out = np.concatenate([q, v])
        if not np.all(np.isfinite(out)):
            raise SimulationDiverged(out)
        return out

    def step(self, action) -> np.ndarray:
        self._state = self.simulate(self._state, action)
        return self._state.copy()

    def set_state(self, state) -> None:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.state_dim,):
            raise UsageError(f"state has shape {state.shape}, expected ({self.state_dim},)")
        self._state = state.copy()

    def observe(self) -> np.ndarray:
        return self._state.copy()

    def observe_structured(self) -> SimState:
        return SimState.from_vector(self._state, self.spec.layout)

    def reset(self) -> np.ndarray:
        self._state = self.spec.default_pose.copy()
        return self.observe()

    def fallen(self, state) -> bool:
        return False

    def lowest_point(self, state) -> float | None:
        return None

    def place_at_height(self, state, d_ground: float) -> np.ndarray:
        return np.array(state, dtype=np.float64)

    def contacts(self, state) -> np.ndarray:
        return np.zeros(0, dtype=bool)


class PointMass(Env):
    param_names = ("mass", "gear")
    defaults = {"mass": 1.0, "gear": 1.0}

    def _build_spec(self):
        layout = StateLayout(2, 0, 0)
        caps = np.array([[-2.0, 2.0], [-2.0, 2.0], [-2.0, 2.0], [-2.0, 2.0]])
        return EnvSpec(
            env_id="point_mass", layout=layout, state_names=("x", "y", "vx", "vy"),
            action_dim=2, sim_dt=SIM_DT, action_repeat=ACTION_REPEAT,
            torque_bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
            default_pose=np.zeros(4), caps=caps, periodic=np.zeros(4, bool),
            fall_height_threshold=None, upright_cone=None, terminates=False,
            calibrate_fixed_root=False, params=dict(self.params),
        )

    def _kernel(self, q, v, tau):
        return dyn.point_step(q, v, tau, self._pvec, SIM_DT, ACTION_REPEAT)


class PendulumCart(Env):
    param_names = ("gravity", "cart_mass", "pole_mass", "pole_half_length", "gear")
    defaults = {"gravity": 9.81, "cart_mass": 1.0, "pole_mass": 0.1,
                "pole_half_length": 0.5, "gear": 10.0}

    def _build_spec(self):
        layout = StateLayout(1, 0, 1)
        caps = np.array([[-2.4, 2.4], [-math.pi, math.pi], [-3.0, 3.0], [-10.0, 10.0]])
        periodic = np.array([False, True, False, False])
        return EnvSpec(
            env_id="pendulum_cart", layout=layout,
            state_names=("x", "pole", "vx", "pole_vel"),
            action_dim=1, sim_dt=SIM_DT, action_repeat=ACTION_REPEAT,
            torque_bounds=np.array([[-1.0, 1.0]]),
            default_pose=np.zeros(4), caps=caps, periodic=periodic,
            fall_height_threshold=None, upright_cone=1.0, fallen_angle_index=1,
            calibrate_fixed_root=False, params=dict(self.params),
        )

    def _kernel(self, q, v, tau):
        return dyn.cart_step(q, v, tau, self._pvec, SIM_DT, ACTION_REPEAT)

    def fallen(self, state) -> bool:
        return abs(float(state[1])) > self.spec.upright_cone


class PlanarHopper(Env):
    param_names = (
        "gravity", "trunk_mass", "trunk_half_length", "trunk_inertia",
        "thigh_mass", "thigh_length", "thigh_inertia",
        "shin_mass", "shin_length", "shin_inertia",
        "gear_hip", "gear_knee",
        "contact_stiffness", "contact_damping", "friction", "tangent_damping",
        "hip_lo", "hip_hi", "knee_lo", "knee_hi",
        "limit_stiffness", "limit_damping", "joint_damping", "fixed_root",
    )
    defaults = {
        "gravity": 9.81,
        "trunk_mass": 3.5, "trunk_half_length": 0.2, "trunk_inertia": 3.5 * 0.4**2 / 12,
        "thigh_mass": 3.9, "thigh_length": 0.45, "thigh_inertia": 3.9 * 0.45**2 / 12,
        "shin_mass": 2.7, "shin_length": 0.5, "shin_inertia": 2.7 * 0.5**2 / 12,
        "gear_hip": 40.0, "gear_knee": 40.0,
        "contact_stiffness": 1e5, "contact_damping": 1e3, "friction": 1.0,
        "tangent_damping": 1e3,
        "hip_lo": -1.0, "hip_hi": 2.0, "knee_lo": -2.5, "knee_hi": 0.0,
        "limit_stiffness": 1e3, "limit_damping": 50.0, "joint_damping": 2.0,
        "fixed_root": 0.0,
    }

    def _build_spec(self):
        p = self.params
        layout = StateLayout(2, 1, 2)
        height = p["trunk_half_length"] + p["thigh_length"] + p["shin_length"]
        default = np.zeros(10)
        default[1] = height
        caps = np.array([
            [-1.0, 1.0], [0.0, height + 1.0], [-math.pi, math.pi],
            [p["hip_lo"], p["hip_hi"]], [p["knee_lo"], p["knee_hi"]],
            [-3.0, 3.0], [-3.0, 3.0], [-6.0, 6.0], [-20.0, 20.0], [-20.0, 20.0],
        ])
        return EnvSpec(
            env_id="planar_hopper", layout=layout,
            state_names=("x", "y", "rot", "hip", "knee",
                         "vx", "vy", "angvel", "hip_vel", "knee_vel"),
            action_dim=2, sim_dt=SIM_DT, action_repeat=ACTION_REPEAT,
            torque_bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
            default_pose=default, caps=caps, periodic=np.zeros(10, bool),
            fall_height_threshold=0.5 * height, upright_cone=1.0, has_ground=True,
            calibrate_fixed_root=True, params=dict(self.params),
        )

    def _kernel(self, q, v, tau):
        return dyn.hopper_step(q, v, tau, self._pvec, SIM_DT, ACTION_REPEAT)

    def fallen(self, state) -> bool:
        return bool(state[1] < self.spec.fall_height_threshold
                    or abs(state[2]) > self.spec.upright_cone)

    def points(self, state) -> np.ndarray:
        """Trunk top, hip, knee and foot positions, shape (4, 2)."""
        return dyn.hopper_points(np.asarray(state[:5], dtype=np.float64), self._pvec)

    def lowest_point(self, state) -> float:
        return float(self.points(state)[:, 1].min())

    def place_at_height(self, state, d_ground):
        out = np.array(state, dtype=np.float64)
        out[1] += d_ground - self.lowest_point(out)
        return out

    def contacts(self, state) -> np.ndarray:
        return self.points(state)[:, 1] <= 0.0

    def foot_contact(self, state) -> bool:
        return bool(self.points(state)[3, 1] <= 0.0)

    def energy(self, state) -> float:
        state = np.asarray(state, dtype=np.float64)
        return float(dyn.hopper_energy(state[:5], state[5:], self._pvec))


_REGISTRY = {"point_mass": PointMass, "pendulum_cart": PendulumCart,
             "planar_hopper": PlanarHopper}


def make_env(env_id: str, overrides=None) -> Env:
    try:
        cls = _REGISTRY[env_id]
    except KeyError:
        raise ConfigError(f"unknown env_id {env_id!r}; expected one of {ENV_IDS}") from None
    return cls(overrides)

