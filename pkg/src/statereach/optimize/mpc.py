"""Online sampling-based MPC with a noise schedule and rollout forking.

Each planning step perturbs the previous best plan (shifted by one step) with
rollout-dependent Gaussian noise, simulates all rollouts in lockstep, and
periodically replaces the worst alive rollouts with forks of survivors.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import SimulationDiverged
from ..sim.tasks import initial_state, is_terminal, reward
from .records import RunRecord
from .trajectory import DIVERGENCE_FLOOR, check_mode, control_action, decision_bounds

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    N: int = 250
    T: int = 20
    prune_fraction: float = 0.25
    noise_scale: float = 1.0
    H: int | None = None
    seed: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)


def noise_variance(i, N, low, high, scale=1.0):
    """Per-dimension variance of rollout ``i``: (i+1)/N * (high - low).

    Written as a division by N/(i+1) so both ends of the schedule are exact:
    (high - low)/N for i = 0 and (high - low) for i = N - 1.
    """
    return scale * ((np.asarray(high, dtype=np.float64) - np.asarray(low, dtype=np.float64)) / (N / (i + 1)))


@dataclass
class MpcStep:
    action: np.ndarray  # torque applied to the environment
    decision: np.ndarray  # first row of the chosen plan
    best: np.ndarray  # full chosen plan, (T, dim)
    best_return: float
    sim_steps: int
    forks: int
    fallback: bool


def initial_plan(env, task, mode, T, ranges=None, state=None):
    if mode == "torque":
        return np.zeros((T, env.spec.action_dim))
    s = initial_state(env, task) if state is None else state
    return np.tile(np.clip(s, ranges.low, ranges.high), (T, 1))


def _sample_plans(base, idx, N, low, high, scale, rng, start=0):
    """Perturb ``base`` rows ``start:`` for rollouts with noise indices ``idx``."""
    T = len(base)
    out = np.repeat(base[None], len(idx), axis=0)
    if start >= T:
        return out
    sd = np.sqrt(np.stack([noise_variance(i, N, low, high, scale) for i in idx]))
    out[:, start:] += sd[:, None, :] * rng.standard_normal((len(idx), T - start, base.shape[1]))
    out[:, -1] = rng.uniform(low, high, (len(idx), base.shape[1]))
    return np.clip(out, low, high)


def online_mpc_step(env, task, state, prev_best, mode="torque", llc_set=None,
                    config: MpcConfig = MpcConfig(), rng=None, step_index=0, episode_steps=None,
                    stage_tasks=None) -> MpcStep:
    """One planning step; ``stage_tasks`` optionally gives the task for each rollout step."""
    check_mode(mode, llc_set)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    N, T = config.N, config.T
    H = config.H if config.H is not None else (llc_set.H_max if llc_set is not None else None)
    bounds = decision_bounds(env, mode, 1, None if llc_set is None else llc_set.ranges)
    low, high = bounds[:, 0], bounds[:, 1]
    if prev_best is None:
        prev_best = initial_plan(env, task, mode, T, None if llc_set is None else llc_set.ranges, state)
    prev_best = np.asarray(prev_best, dtype=np.float64)
    base = np.concatenate([prev_best[1:], prev_best[-1:]], axis=0)

    noise_idx = np.arange(N)
    plans = _sample_plans(base, noise_idx, N, low, high, config.noise_scale, rng)
    states = np.repeat(np.asarray(state, dtype=np.float64)[None], N, axis=0)
    returns = np.zeros(N)
    alive = np.ones(N, dtype=bool)
    diverged = np.zeros(N, dtype=bool)
    sim_steps = forks = 0
    # steps left in the task episode bound how much a fall can cost
    horizon_left = T if episode_steps is None else min(T, episode_steps - step_index)

    for t in range(T):
        stage = task if stage_tasks is None else stage_tasks[t]
        for i in np.flatnonzero(alive):
            s = states[i]
            a = control_action(env, mode, plans[i, t:], s, llc_set, H)
            sim_steps += 1
            try:
                s2 = env.simulate(s, a)
            except SimulationDiverged:
                alive[i] = False
                diverged[i] = True
                returns[i] = DIVERGENCE_FLOOR
                continue
            returns[i] += reward(s, s2, a, stage, env.spec)
            states[i] = s2
            if is_terminal(env, s2, stage):
                alive[i] = False
                returns[i] += task.fall_penalty * max(horizon_left - (t + 1), 0)
        live = np.flatnonzero(alive)
        n_prune = int(config.prune_fraction * len(live))
        if t < T - 1 and n_prune > 0:
            order = live[np.argsort(returns[live], kind="stable")]
            losers, survivors = order[:n_prune], order[n_prune:]
            parents = survivors[rng.integers(len(survivors), size=n_prune)]
            # a fork keeps its parent's noise index and past, then re-samples the rest
            fresh = _sample_plans(base, noise_idx[parents], N, low, high, config.noise_scale, rng, t + 1)
            plans[losers, t + 1:] = fresh[:, t + 1:]
            plans[losers, : t + 1] = plans[parents, : t + 1]
            states[losers] = states[parents]
            returns[losers] = returns[parents]
            noise_idx[losers] = noise_idx[parents]
            forks += n_prune

    if diverged.all():
        log.warning("all MPC rollouts diverged; reusing the previous plan")
        a = control_action(env, mode, base, state, llc_set, H)
        return MpcStep(a, base[0], base, DIVERGENCE_FLOOR, sim_steps, forks, True)
    best = int(np.argmax(np.where(diverged, -np.inf, returns)))
    a = control_action(env, mode, plans[best], state, llc_set, H)
    return MpcStep(a, plans[best, 0].copy(), plans[best].copy(), float(returns[best]), sim_steps, forks, False)


def run_mpc(env, task, mode="torque", llc_set=None, config: MpcConfig = MpcConfig(),
            n_steps=None, target_fn=None, action_space=None, callback=None):
    """Closed-loop MPC episode.

    ``target_fn(t)`` (seconds) moves the task's target position; rollouts
    score each step against the target position at that step's time.
    Returns (visited states, applied actions, RunRecord).
    """
    check_mode(mode, llc_set)
    dt = env.spec.control_period
    n_steps = task.steps(dt) if n_steps is None else n_steps
    rng = np.random.default_rng(config.seed)
    state = initial_state(env, task)
    states, actions = [state], []
    record = RunRecord(env.spec.env_id, task.task_id, action_space or mode, "mpc",
                       config.H if mode == "llc" else None, config.seed)
    plan = None
    total = 0.0
    env_steps = 0
    for k in range(n_steps):
        if target_fn is None:
            cur_task, stages = task, None
        else:
            cur_task = task.with_target_position(target_fn((k + 1) * dt))
            stages = [task.with_target_position(target_fn((k + 1 + j) * dt)) for j in range(config.T)]
        step = online_mpc_step(env, cur_task, state, plan, mode, llc_set, config, rng, k, n_steps, stages)
        plan = step.best
        env_steps += step.sim_steps + 1
        nxt = env.simulate(state, step.action)
        total += reward(state, nxt, step.action, cur_task, env.spec)
        state = nxt
        states.append(state)
        actions.append(step.action)
        terminal = is_terminal(env, state, cur_task)
        if terminal:
            total += task.fall_penalty * (n_steps - k - 1)
        record.add(k, env_steps, total)
        if callback is not None:
            callback(k, step, state)
        if terminal:
            break
    record.extra.update({"config": config.to_dict(), "episode_return": total})
    return np.array(states), np.array(actions), record
