"""Joint-range calibration with the agent held in the air."""

import numpy as np

from ..errors import UsageError
from .state import StateRanges

MIN_CALIBRATION_STEPS = 10_000


def calibrate_state_ranges(env, n_steps: int = MIN_CALIBRATION_STEPS, seed: int = 0) -> StateRanges:
    """Record joint angle/velocity extremes under uniform random torques.

    Gravity is switched off and, for agents with a free-floating root, the
    root is welded in place.  Root rows are copied from the environment
    caps; periodic joints get the full circle.
    """
    if n_steps < MIN_CALIBRATION_STEPS:
        raise UsageError(f"calibration needs at least {MIN_CALIBRATION_STEPS} steps, got {n_steps}")
    spec = env.spec
    overrides = {}
    if "gravity" in env.params:
        overrides["gravity"] = 0.0
    if spec.calibrate_fixed_root and "fixed_root" in env.params:
        overrides["fixed_root"] = 1.0
    sim = env.variant(**overrides)

    layout = spec.layout
    joint_dims = np.concatenate([layout.joint_angles, layout.joint_angvels]).astype(int)
    rng = np.random.default_rng(seed)
    bounds = spec.torque_bounds
    state = spec.default_pose.copy()
    lo = state[joint_dims].copy()
    hi = state[joint_dims].copy()
    for _ in range(n_steps):
        state = sim.simulate(state, rng.uniform(bounds[:, 0], bounds[:, 1]))
        np.minimum(lo, state[joint_dims], out=lo)
        np.maximum(hi, state[joint_dims], out=hi)

    low = spec.caps[:, 0].astype(np.float64)
    high = spec.caps[:, 1].astype(np.float64)
    low[joint_dims] = lo
    high[joint_dims] = hi
    low[spec.periodic] = -np.pi
    high[spec.periodic] = np.pi
    return StateRanges(low, high, spec.periodic.copy())
