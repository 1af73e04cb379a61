"""Open-loop trajectory evaluation in torque space or target-state space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, SimulationDiverged, UsageError
from ..llc import track
from ..sim.tasks import initial_state, is_terminal, reward

MODES = ("torque", "llc")
DIVERGENCE_FLOOR = -1.0e4


@dataclass(frozen=True)
class EvalResult:
    total: float
    steps: int
    terminated_at: int | None = None
    diverged: bool = False

    def __float__(self):
        return self.total


def check_mode(mode, llc_set):
    if mode not in MODES:
        raise ConfigError(f"unknown action space {mode!r}; expected one of {MODES}")
    if mode == "llc" and llc_set is None:
        raise UsageError("LLC mode needs a trained LlcSet")


def decision_dim(env, mode) -> int:
    return env.spec.action_dim if mode == "torque" else env.spec.state_dim


def decision_bounds(env, mode, T, ranges=None) -> np.ndarray:
    """Per-entry (low, high) bounds of a flat decision vector, shape (T*dim, 2)."""
    if mode == "torque":
        b = env.spec.torque_bounds
    else:
        if ranges is None:
            raise UsageError("LLC-mode bounds need StateRanges")
        b = np.stack([ranges.low, ranges.high], axis=1)
    return np.tile(b, (T, 1))


def as_decision(decision, env, mode, T=None) -> np.ndarray:
    d = np.asarray(decision, dtype=np.float64)
    dim = decision_dim(env, mode)
    if d.ndim == 1:
        if d.size % dim:
            raise UsageError(f"decision length {d.size} is not a multiple of {dim}")
        d = d.reshape(-1, dim)
    if d.shape[1] != dim:
        raise UsageError(f"decision rows have dim {d.shape[1]}, expected {dim}")
    if T is not None and len(d) != T:
        raise UsageError(f"decision covers {len(d)} steps, expected T={T}")
    if len(d) < 1:
        raise UsageError("a decision needs at least one step (T >= 1)")
    return d


def control_action(env, mode, row_targets, state, llc_set, H):
    """Torque for one step: the decision row itself, or the LLC's response."""
    if mode == "torque":
        return env.clamp_action(row_targets[0])
    return track(llc_set, state, row_targets[:H])


def rollout_return(env, task, state, decision, mode, llc_set=None, H=None,
                   start_step=0, horizon=None):
    """Roll ``decision`` from ``state`` and sum task rewards.

    ``start_step``/``horizon`` position the rollout inside a task episode so
    that early termination charges the right number of lost steps.
    Returns (EvalResult, final state).
    """
    T = len(decision)
    if H is None and llc_set is not None:
        H = llc_set.H_max
    horizon = T if horizon is None else horizon
    total = 0.0
    s = state
    for t in range(T):
        a = control_action(env, mode, decision[t:], s, llc_set, H)
        try:
            s_next = env.simulate(s, a)
        except SimulationDiverged:
            return EvalResult(DIVERGENCE_FLOOR, t, diverged=True), s
        total += reward(s, s_next, a, task, env.spec)
        s = s_next
        if is_terminal(env, s, task):
            lost = horizon - (start_step + t + 1)
            return EvalResult(total + task.fall_penalty * lost, t + 1, start_step + t + 1), s
    return EvalResult(total, T), s


def evaluate_trajectory(env, task, decision, mode="torque", llc_set=None, H=None, T=None) -> EvalResult:
    """Return of an open-loop decision from the task's initial state.

    LLC mode feeds the next min(H, remaining) targets to the LLC at every step.
    """
    check_mode(mode, llc_set)
    d = as_decision(decision, env, mode, T)
    if mode == "llc":
        H = llc_set.H_max if H is None else H
        if not 1 <= H <= llc_set.H_max:
            raise UsageError(f"H={H} not available in LLC set with H_max={llc_set.H_max}")
    result, _ = rollout_return(env, task, initial_state(env, task), d, mode, llc_set, H)
    return result
