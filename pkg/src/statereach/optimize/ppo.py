"""Clipped-surrogate PPO with a value network and GAE as a high-level controller.

In torque mode the policy outputs joint actions.  In LLC mode it outputs
an H x state_dim block interpreted as offsets from the current state (in
units of half the calibrated range), which the LLC turns into torques.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import SimulationDiverged, TrainingError, UsageError
from ..llc import track
from ..nn import SMALL_HIDDEN, Adam, GaussianPolicy, Mlp, MlpConfig
from ..sim.state import StateRanges
from ..sim.tasks import initial_state, is_terminal, reward
from .records import RunRecord
from .trajectory import DIVERGENCE_FLOOR, check_mode

log = logging.getLogger(__name__)

OBS_STD_FLOOR = 0.05  # fraction of each calibrated span


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 1e-4
    minibatches: int = 4
    epochs: int = 4
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    batch_steps: int = 2000
    total_steps: int = 300_000
    hidden: tuple = SMALL_HIDDEN
    init_log_std: float = 0.0
    reward_scaling: bool = False
    obs_normalization: bool = False
    H: int | None = None
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise UsageError("gamma must be in (0, 1] and gae_lambda in [0, 1]")
        if self.batch_steps < self.minibatches:
            raise UsageError("batch_steps must be at least the number of minibatches")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class ReturnScaler:
    """Divides rewards by a running standard deviation of discounted returns."""

    def __init__(self, gamma, enabled=True):
        self.gamma, self.enabled = gamma, enabled
        self.ret = 0.0
        self.count, self.mean, self.m2 = 0, 0.0, 0.0

    def __call__(self, r, end):
        if not self.enabled:
            return r
        self.ret = self.ret * self.gamma + r
        self.count += 1
        delta = self.ret - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (self.ret - self.mean)
        if end:
            self.ret = 0.0
        var = self.m2 / self.count if self.count > 1 else 1.0
        return r / np.sqrt(var + 1e-8)


def gae(rewards, values, next_values, terminals, ends, gamma, lam):
    """Generalized advantage estimates over a batch of consecutive steps.

    ``terminals`` marks true episode ends (no bootstrap); ``ends`` marks any
    episode boundary, including time-limit truncation (bootstrap through
    ``next_values``).
    """
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        nv = 0.0 if terminals[t] else next_values[t]
        delta = rewards[t] + gamma * nv - values[t]
        running = delta + (0.0 if ends[t] else gamma * lam * running)
        adv[t] = running
    return adv, adv + values


class HlcAgent:
    """Observation normalization and the mapping from policy output to torques."""

    def __init__(self, env, mode, ranges: StateRanges, llc_set=None, H=None, obs_stats=None):
        check_mode(mode, llc_set)
        self.env, self.mode, self.llc_set = env, mode, llc_set
        self.ranges = ranges
        self.center, self.scale = ranges.center, ranges.scale()
        # running observation statistics, seeded with the calibrated box
        self.obs_mean = self.center.copy()
        self.obs_var = self.scale**2
        self.obs_count = 1.0
        if obs_stats is not None:
            self.obs_mean = np.asarray(obs_stats["mean"], dtype=np.float64)
            self.obs_var = np.asarray(obs_stats["var"], dtype=np.float64)
            self.obs_count = float(obs_stats["count"])
        if mode == "llc":
            self.H = llc_set.H_max if H is None else H
            if not 1 <= self.H <= llc_set.H_max:
                raise UsageError(f"H={self.H} not available in LLC set with H_max={llc_set.H_max}")
        else:
            self.H = None

    @property
    def action_dim(self):
        if self.mode == "torque":
            return self.env.spec.action_dim
        return self.H * self.env.spec.state_dim

    def observe(self, s):
        # the floor keeps nearly constant dimensions from being blown up into noise
        var = np.maximum(self.obs_var, (OBS_STD_FLOOR * 2.0 * self.scale) ** 2)
        z = (np.asarray(s) - self.obs_mean) / np.sqrt(var)
        return np.clip(z, -10.0, 10.0)

    def update_obs_stats(self, raw):
        """Merge a batch of raw states into the running mean and variance."""
        raw = np.atleast_2d(raw)
        n = len(raw)
        mean, var = raw.mean(axis=0), raw.var(axis=0)
        total = self.obs_count + n
        delta = mean - self.obs_mean
        self.obs_mean = self.obs_mean + delta * n / total
        m2 = self.obs_var * self.obs_count + var * n + delta**2 * self.obs_count * n / total
        self.obs_var = m2 / total
        self.obs_count = total

    def obs_stats(self) -> dict:
        return {"mean": self.obs_mean.tolist(), "var": self.obs_var.tolist(), "count": self.obs_count}

    def targets(self, s, a):
        d = self.env.spec.state_dim
        G = s[None, :] + self.scale * np.clip(a, -1.0, 1.0).reshape(self.H, d)
        per = self.ranges.periodic
        G[:, per] = (G[:, per] + np.pi) % (2 * np.pi) - np.pi
        return np.clip(G, self.ranges.low, self.ranges.high)

    def torque(self, s, a):
        if self.mode == "torque":
            return self.env.clamp_action(a)
        return track(self.llc_set, s, self.targets(s, a))


def _policy_update(policy, opt, x, acts, adv, old_logp, cfg, idx):
    logp, _ = policy.log_prob_and_grad(x[idx], acts[idx], np.zeros(len(idx)))
    ratio = np.exp(logp - old_logp[idx])
    a = adv[idx]
    active = np.where(a >= 0, ratio < 1 + cfg.clip, ratio > 1 - cfg.clip)
    weights = -(a * ratio * active) / len(idx)
    surrogate = np.minimum(ratio * a, np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * a)
    loss = -float(surrogate.mean()) - cfg.entropy_coef * policy.entropy()
    if not np.isfinite(loss):
        return loss
    _, grads = policy.log_prob_and_grad(x[idx], acts[idx], weights)
    inside = (policy.log_std > -5.0) & (policy.log_std < 2.0)
    grads[-1] = grads[-1] - cfg.entropy_coef * inside
    opt.step(policy.parameters(), grads)
    np.clip(policy.log_std, -5.0, 2.0, out=policy.log_std)
    return loss


def _value_update(vnet, opt, x, returns, cfg, idx):
    cache = []
    v = vnet.forward(x[idx], cache)[:, 0]
    err = v - returns[idx]
    loss = cfg.value_coef * float(np.mean(err * err))
    if not np.isfinite(loss):
        return loss
    grads = vnet.backward(cache, (2.0 * cfg.value_coef * err / len(idx))[:, None])
    opt.step(vnet.params, grads)
    return loss


def _abort(policy, cfg, diagnostics):
    if cfg.checkpoint_dir:
        path = Path(cfg.checkpoint_dir)
        path.mkdir(parents=True, exist_ok=True)
        policy.save(path / "ppo_abort.npz")
        diagnostics["checkpoint"] = str(path / "ppo_abort.npz")
    raise TrainingError("non-finite PPO loss", diagnostics)


def ppo_hlc(env, task, mode="torque", llc_set=None, config: PpoConfig = PpoConfig(),
            ranges: StateRanges | None = None, action_space=None, callback=None):
    """Train a high-level policy; returns (GaussianPolicy, RunRecord).

    ``record.extra["obs_stats"]`` holds the observation normalizer needed to
    run the policy again (see :func:`agent_from_record`).
    """
    if ranges is None:
        ranges = llc_set.ranges if llc_set is not None else StateRanges(
            env.spec.caps[:, 0].copy(), env.spec.caps[:, 1].copy(), env.spec.periodic.copy())
    agent = HlcAgent(env, mode, ranges, llc_set, config.H)
    raw_states = []
    obs_dim = env.spec.state_dim
    seeds = np.random.SeedSequence(config.seed).generate_state(3)
    policy = GaussianPolicy.create(MlpConfig(obs_dim, agent.action_dim, config.hidden, seed=int(seeds[0])),
                                   init_log_std=config.init_log_std)
    vnet = Mlp(MlpConfig(obs_dim, 1, config.hidden, seed=int(seeds[1])))
    popt = Adam(config.learning_rate, config.max_grad_norm)
    vopt = Adam(config.learning_rate, config.max_grad_norm)
    rng = np.random.default_rng(seeds[2])
    scaler = ReturnScaler(config.gamma, config.reward_scaling)
    limit = task.steps(env.spec.control_period)

    record = RunRecord(env.spec.env_id, task.task_id, action_space or mode, "ppo", agent.H, config.seed)
    episode = 0

    def reset():
        t = dataclasses.replace(task, init_seed=int(rng.integers(2**31)))
        return initial_state(env, t)

    s = reset()
    ep_t, ep_ret = 0, 0.0
    env_steps = 0
    iteration = 0
    last_mean = None
    while env_steps < config.total_steps:
        n = min(config.batch_steps, config.total_steps - env_steps)
        obs = np.zeros((n, obs_dim))
        acts = np.zeros((n, agent.action_dim))
        rews = np.zeros(n)
        next_obs = np.zeros((n, obs_dim))
        terminals = np.zeros(n, dtype=bool)
        ends = np.zeros(n, dtype=bool)
        finished = []
        raw_states.clear()
        for k in range(n):
            raw_states.append(s)
            x = agent.observe(s)
            mean, std = policy.forward(x)
            a = mean + std * rng.standard_normal(mean.shape)
            tau = agent.torque(s, a)
            try:
                s2 = env.simulate(s, tau)
                r = reward(s, s2, tau, task, env.spec)
                term = is_terminal(env, s2, task)
            except SimulationDiverged:
                s2, r, term = s, DIVERGENCE_FLOOR / limit, True
            ep_t += 1
            if term:
                r += task.fall_penalty * (limit - ep_t)
            ep_ret += r
            terminals[k] = term
            ends[k] = term or ep_t >= limit or k == n - 1
            obs[k], acts[k], next_obs[k] = x, a, agent.observe(s2)
            rews[k] = scaler(r, term or ep_t >= limit)
            if term or ep_t >= limit:
                finished.append(ep_ret)
                episode += 1
                s, ep_t, ep_ret = reset(), 0, 0.0
            else:
                s = s2
        env_steps += n
        if config.obs_normalization:
            # statistics change between batches only, so a batch is normalized consistently
            agent.update_obs_stats(np.array(raw_states))

        values = vnet.forward(obs)[:, 0]
        next_values = vnet.forward(next_obs)[:, 0]
        adv, rets = gae(rews, values, next_values, terminals, ends, config.gamma, config.gae_lambda)
        adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
        old_logp = policy.log_prob(obs, acts)
        for _ in range(config.epochs):
            for idx in np.array_split(rng.permutation(n), config.minibatches):
                pl = _policy_update(policy, popt, obs, acts, adv_n, old_logp, config, idx)
                vl = _value_update(vnet, vopt, obs, rets, config, idx)
                if not (np.isfinite(pl) and np.isfinite(vl)):
                    _abort(policy, config, {"iteration": iteration, "policy_loss": pl, "value_loss": vl})
        if finished:
            last_mean = (float(np.mean(finished)), float(np.std(finished)))
        if last_mean is not None:
            record.add(iteration, env_steps, *last_mean)
        log.info("ppo iter=%d steps=%d return=%s", iteration, env_steps, last_mean)
        if callback is not None:
            callback(iteration, policy, last_mean, agent)
        iteration += 1
    record.extra.update({"config": config.to_dict(), "episodes": episode,
                         "obs_stats": agent.obs_stats(), "ranges": ranges.to_dict()})
    return policy, record


def policy_return(env, task, policy, agent: HlcAgent, rng=None, deterministic=True) -> float:
    """Return of one episode; seeded noise on the initial state when ``rng`` is given."""
    t = task if rng is None else dataclasses.replace(task, init_seed=int(rng.integers(2**31)))
    s = initial_state(env, t)
    limit = task.steps(env.spec.control_period)
    total = 0.0
    for k in range(limit):
        x = agent.observe(s)
        if deterministic:
            a = policy.mlp.forward(x)
        else:
            mean, std = policy.forward(x)
            a = mean + std * rng.standard_normal(mean.shape)
        tau = agent.torque(s, a)
        try:
            s2 = env.simulate(s, tau)
        except SimulationDiverged:
            return DIVERGENCE_FLOOR
        total += reward(s, s2, tau, task, env.spec)
        s = s2
        if is_terminal(env, s, task):
            return total + task.fall_penalty * (limit - k - 1)
    return total


def agent_from_record(env, record: RunRecord, mode="torque", llc_set=None) -> HlcAgent:
    """Rebuild the observation normalizer and action mapping a policy was trained with."""
    return HlcAgent(env, mode, StateRanges.from_dict(record.extra["ranges"]), llc_set,
                    record.H, record.extra["obs_stats"])
