"""Goal-conditioned low-level controllers (LLCs).

A family of policies pi_1..pi_Hmax maps (current state, H target states) to a
torque action.  pi_H is trained after pi_1..pi_{H-1}: its returns come from
rolling one sampled action with pi_H and the remaining H-1 steps with the
already-trained shorter-horizon policies, so no value network is needed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SimulationDiverged, TrainingError, UsageError
from .nn import SMALL_HIDDEN, Adam, GaussianPolicy, GradStep, MlpConfig
from .sim.state import StateRanges

log = logging.getLogger(__name__)

TARGET_MODES = ("trajectory", "single")
BRANCH_EXPLORATION, BRANCH_LINEAR, BRANCH_CONSTANT = 0, 1, 2


@dataclass(frozen=True)
class StateMetric:
    """Squared state distance, optionally divided per-dimension by range spans.

    Periodic dimensions use the wrapped difference.
    """

    span: np.ndarray
    periodic: np.ndarray
    normalize: bool = True

    @classmethod
    def from_ranges(cls, ranges: StateRanges, normalize=True):
        return cls(np.maximum(ranges.span, 1e-9), ranges.periodic.copy(), normalize)

    def diff(self, a, b):
        d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        if self.periodic.any():
            d = np.where(self.periodic, (d + np.pi) % (2 * np.pi) - np.pi, d)
        return d / self.span if self.normalize else d

    def __call__(self, a, b) -> float:
        d = self.diff(a, b)
        return float(d @ d)


@dataclass(frozen=True)
class TargetTrajectory:
    states: np.ndarray  # (H, state_dim)

    def __post_init__(self):
        if self.states.ndim != 2 or len(self.states) < 1:
            raise UsageError("a target trajectory needs at least one state")
        if not np.all(np.isfinite(self.states)):
            raise UsageError("target states must be finite")

    def __len__(self):
        return len(self.states)


class LlcSet:
    def __init__(self, env_spec, ranges: StateRanges, H_max=5, target_mode="trajectory",
                 hidden=SMALL_HIDDEN, normalize_metric=True, seed=0, policies=None):
        if target_mode not in TARGET_MODES:
            raise ConfigError(f"unknown target_mode {target_mode!r}")
        if H_max < 1:
            raise ConfigError("H_max must be >= 1")
        self.env_id = env_spec.env_id
        self.state_dim = env_spec.state_dim
        self.action_bounds = env_spec.torque_bounds.copy()
        self.ranges = ranges
        self.H_max = H_max
        self.target_mode = target_mode
        self.hidden = tuple(hidden)
        self.metric = StateMetric.from_ranges(ranges, normalize_metric)
        self.seed = seed
        self._center = ranges.center
        self._scale = ranges.scale()
        self.policies = dict(policies) if policies else {
            H: self._new_policy(H) for H in range(1, H_max + 1)}
        self.metadata: dict = {}

    def input_dim(self, H):
        n_targets = H if self.target_mode == "trajectory" else 1
        return self.state_dim * (1 + n_targets)

    def _new_policy(self, H):
        cfg = MlpConfig(self.input_dim(H), len(self.action_bounds), self.hidden,
                        seed=int(np.random.SeedSequence([self.seed, H]).generate_state(1)[0]))
        return GaussianPolicy.create(cfg, self.action_bounds)

    def reset_policy(self, H):
        self.policies[H] = self._new_policy(H)

    def policy(self, H) -> GaussianPolicy:
        if not 1 <= H <= self.H_max:
            raise UsageError(f"no LLC for H={H} (H_max={self.H_max})")
        return self.policies[H]

    def encode(self, s, G):
        """Network input for state ``s`` and targets ``G`` (H, state_dim)."""
        G = np.asarray(G, dtype=np.float64)
        if self.target_mode == "single":
            G = G[-1:]
        parts = np.concatenate([np.asarray(s, dtype=np.float64)[None, :], G], axis=0)
        return ((parts - self._center) / self._scale).ravel()

    def step_reward(self, s_next, G, H) -> float:
        """Reward for the step that consumes the first target of ``G``."""
        if self.target_mode == "single":
            return -self.metric(s_next, G[-1]) if H == 1 else 0.0
        return -self.metric(s_next, G[0])

    def digest(self, H=None) -> str:
        h = hashlib.sha256()
        for k in ([H] if H else sorted(self.policies)):
            h.update(self.policies[k].digest().encode())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "env_id": self.env_id, "H_max": self.H_max, "target_mode": self.target_mode,
            "hidden": list(self.hidden), "normalize_metric": self.metric.normalize,
            "ranges": self.ranges.to_dict(), "seed": self.seed,
            "digests": {str(H): p.digest() for H, p in sorted(self.policies.items())},
            **self.metadata,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for H, pol in sorted(self.policies.items()):
            pol.save(directory / f"pi_{H}.npz")
        (directory / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory, env_spec=None) -> LlcSet:
        directory = Path(directory)
        man = json.loads((directory / "manifest.json").read_text())
        if env_spec is not None and env_spec.env_id != man["env_id"]:
            raise ConfigError(f"LLC set was trained for {man['env_id']!r}, not {env_spec.env_id!r}")
        if env_spec is None:
            from .sim.envs import make_env
            env_spec = make_env(man["env_id"]).spec
        policies = {H: GaussianPolicy.load(directory / f"pi_{H}.npz")
                    for H in range(1, man["H_max"] + 1)}
        llc = cls(env_spec, StateRanges.from_dict(man["ranges"]), man["H_max"], man["target_mode"],
                  tuple(man["hidden"]), man["normalize_metric"], man["seed"], policies)
        for H, digest in man["digests"].items():
            if policies[int(H)].digest() != digest:
                raise ConfigError(f"{directory}: weights for H={H} do not match the manifest")
        llc.metadata = {k: v for k, v in man.items() if k not in llc.manifest()}
        return llc


def track(llc_set: LlcSet, s, G) -> np.ndarray:
    """Deterministic low-level action steering ``s`` along targets ``G``."""
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    H = len(G)
    if H == 0:
        raise UsageError("track() needs at least one target state")
    if H > llc_set.H_max:
        raise UsageError(f"{H} targets given but H_max is {llc_set.H_max}")
    return llc_set.policy(H).act(llc_set.encode(s, G))


def calc_q(env, llc_set: LlcSet, s, G, rng=None, actions=None, deterministic=False):
    """Return (first action, undiscounted return, all executed actions).

    The first action comes from pi_len(G); the remainder of the episode
    recurses on the shorter target suffix.  ``actions`` replays a fixed
    action sequence instead of sampling.
    """
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    H = len(G)
    if actions is not None:
        a = np.asarray(actions[0], dtype=np.float64)
    else:
        x = llc_set.encode(s, G)
        pol = llc_set.policy(H)
        a = pol.act(x) if deterministic else pol.sample(x, rng)
    s_next = env.simulate(s, a)
    r = llc_set.step_reward(s_next, G, H)
    if H == 1:
        return a, r, [a]
    _, q_rest, rest = calc_q(env, llc_set, s_next, G[1:], rng,
                             None if actions is None else actions[1:], deterministic)
    return a, r + q_rest, [a] + rest


@dataclass(frozen=True)
class LlcTrainConfig:
    H_max: int = 5
    M: int = 50
    N: int = 1500
    N_adv: int = 4
    p_e: float = 0.8
    p_l: float = 0.1
    ablation_feasible_only: bool = False
    target_mode: str = "trajectory"
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    ppo_minibatches: int = 4
    learning_rate: float = 2e-3
    gradient_clip: float = 0.5
    pretrain_epochs: int = 5
    pretrain_batch: int = 256
    pretrain_learning_rate: float = 1e-3
    hidden: tuple = SMALL_HIDDEN
    normalize_metric: bool = True
    normalize_advantages: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.p_e < 0 or self.p_l < 0 or self.p_e + self.p_l > 1:
            raise ConfigError("need p_e, p_l >= 0 and p_e + p_l <= 1")
        if self.N_adv < 2:
            raise ConfigError("N_adv must be >= 2 for a mean baseline")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"unknown target_mode {self.target_mode!r}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class StartSampler:
    """Uniform draws of start states from an exploration buffer."""

    def __init__(self, buffer):
        self.buffer = buffer
        self._all = np.array([(e, t) for e, a in enumerate(buffer.actions)
                              for t in range(len(a) + 1)], dtype=np.int64)
        self._eligible = {}

    def eligible(self, H):
        if H not in self._eligible:
            self._eligible[H] = np.array([(e, t) for e, a in enumerate(self.buffer.actions)
                                          for t in range(len(a) - H + 1)], dtype=np.int64).reshape(-1, 2)
        return self._eligible[H]

    def draw(self, rng, H=None):
        pool = self._all if H is None else self.eligible(H)
        if len(pool) == 0:
            raise ConfigError(f"no exploration episode has {H} successors")
        e, t = pool[rng.integers(len(pool))]
        return int(e), int(t)


def _linear_targets(s, g, H, periodic):
    d = g - s
    d = np.where(periodic, (d + np.pi) % (2 * np.pi) - np.pi, d)
    frac = np.arange(1, H + 1)[:, None] / H
    G = s[None, :] + frac * d[None, :]
    G[:, periodic] = (G[:, periodic] + np.pi) % (2 * np.pi) - np.pi
    G[-1] = g
    return G


def sample_target_trajectory(buffer, episode, t, H, ranges: StateRanges, rng,
                             config: LlcTrainConfig, branch=None):
    """Targets for start state ``buffer.states[episode][t]``.

    Returns (targets (H, state_dim), branch).  The exploration branch needs
    ``H`` stored successors; callers draw the branch first (``branch``) and
    pick an eligible start when it is the exploration one.
    """
    if branch is None:
        branch = draw_target_branch(rng, config)
    states = buffer.states[episode]
    s = states[t]
    if branch == BRANCH_EXPLORATION:
        if t + H >= len(states):
            raise UsageError(f"start (episode={episode}, t={t}) has fewer than {H} successors")
        return states[t + 1: t + 1 + H].copy(), branch
    g = ranges.sample(rng)
    if branch == BRANCH_LINEAR:
        return _linear_targets(s, g, H, ranges.periodic), branch
    return np.repeat(g[None, :], H, axis=0), branch


def draw_target_branch(rng, config: LlcTrainConfig) -> int:
    if config.ablation_feasible_only:
        return BRANCH_EXPLORATION
    r = rng.random()
    if r < config.p_e:
        return BRANCH_EXPLORATION
    if r < config.p_e + config.p_l:
        return BRANCH_LINEAR
    return BRANCH_CONSTANT


def sample_episode_start(sampler: StartSampler, H, ranges, rng, config):
    branch = draw_target_branch(rng, config)
    e, t = sampler.draw(rng, H if branch == BRANCH_EXPLORATION else None)
    G, _ = sample_target_trajectory(sampler.buffer, e, t, H, ranges, rng, config, branch)
    return sampler.buffer.states[e][t], G, branch


def pretrain_dataset(llc_set: LlcSet, buffer, H):
    xs, ys = [], []
    for states, actions in zip(buffer.states, buffer.actions):
        for t in range(len(actions) - H + 1):
            xs.append(llc_set.encode(states[t], states[t + 1: t + 1 + H]))
            ys.append(actions[t])
    if not xs:
        raise ConfigError(f"no exploration subsequence of {H + 1} states for pretraining")
    return np.array(xs), np.array(ys)


def pretrain(llc_set: LlcSet, buffer, H, config: LlcTrainConfig, rng) -> list[float]:
    """Maximum-likelihood fit of pi_H to the recorded first actions.

    Returns the mean negative log-likelihood of each epoch.
    """
    x, y = pretrain_dataset(llc_set, buffer, H)
    pol = llc_set.policy(H)
    opt = Adam(config.pretrain_learning_rate, config.gradient_clip)
    losses = []
    n = len(x)
    for _ in range(config.pretrain_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.pretrain_batch):
            idx = order[start: start + config.pretrain_batch]
            logp, grads = pol.log_prob_and_grad(x[idx], y[idx], -np.ones(len(idx)) / len(idx))
            opt.step(pol.parameters(), grads)
            np.clip(pol.log_std, -5.0, 2.0, out=pol.log_std)
            total += -float(logp.sum())
        losses.append(total / n)
    return losses


@dataclass
class AdvantageBatch:
    inputs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    advantages: list = field(default_factory=list)
    values: list = field(default_factory=list)
    actions_used: int = 0
    discarded: int = 0

    def add_state(self, x, first_actions, returns, normalize=False):
        q = np.asarray(returns, dtype=np.float64)
        v = float(np.mean(q))
        adv = q - v
        if normalize:
            sd = float(np.std(q))
            adv = adv / sd if sd > 1e-12 else np.zeros_like(adv)
        for a, qi, ai in zip(first_actions, q, adv):
            self.inputs.append(x)
            self.actions.append(a)
            self.returns.append(float(qi))
            self.advantages.append(float(ai))
        self.values.append(v)

    def arrays(self):
        return np.array(self.inputs), np.array(self.actions), np.array(self.advantages)


def collect_advantages(env, llc_set, sampler, H, config, rng) -> AdvantageBatch:
    batch = AdvantageBatch()
    ranges = llc_set.ranges
    while batch.actions_used < config.N:
        s, G, _ = sample_episode_start(sampler, H, ranges, rng, config)
        firsts, qs = [], []
        try:
            for _ in range(config.N_adv):
                a, q, _ = calc_q(env, llc_set, s, G, rng)
                firsts.append(a)
                qs.append(q)
        except SimulationDiverged:
            batch.discarded += 1
            log.warning("CalcQ episode diverged; state discarded")
            batch.actions_used += H * config.N_adv
            continue
        batch.actions_used += H * config.N_adv
        batch.add_state(llc_set.encode(s, G), firsts, qs, config.normalize_advantages)
    return batch


def ppo_positive_update(policy: GaussianPolicy, x, actions, advantages, config, rng,
                        optimizer: Adam) -> int:
    """Clipped-surrogate PPO step using only samples with positive advantage.

    Returns the number of samples used; zero means the policy is untouched.
    """
    keep = advantages > 0.0
    if not np.any(keep):
        return 0
    x, actions, adv = x[keep], actions[keep], advantages[keep]
    old_logp = policy.log_prob(x, actions)
    n = len(x)
    n_mb = max(1, min(config.ppo_minibatches, n))
    for _ in range(config.ppo_epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, n_mb):
            logp = policy.log_prob(x[chunk], actions[chunk])
            ratio = np.exp(logp - old_logp[chunk])
            # for A > 0 the clipped objective is flat once ratio > 1 + clip
            active = ratio < 1.0 + config.ppo_clip
            w = -(adv[chunk] * ratio * active) / len(chunk)
            _, grads = policy.log_prob_and_grad(x[chunk], actions[chunk], w)
            optimizer.step(policy.parameters(), grads)
            np.clip(policy.log_std, -5.0, 2.0, out=policy.log_std)
    return n


@dataclass
class IterationStats:
    H: int
    iteration: int
    mean_return: float
    tracking_error: float
    positive_samples: int
    states: int
    discarded: int


def train_llcs(env, buffer, ranges: StateRanges, config: LlcTrainConfig,
               llc_set: LlcSet | None = None, callback=None, pretrained: dict | None = None):
    """Train pi_1..pi_Hmax in order; returns (LlcSet, per-iteration stats).

    When ``pretrained`` is a dict it receives a snapshot of each pi_H taken
    right after supervised pretraining.
    """
    if buffer.n_transitions == 0:
        raise ConfigError("exploration buffer is empty")
    if llc_set is None:
        llc_set = LlcSet(env.spec, ranges, config.H_max, config.target_mode, config.hidden,
                         config.normalize_metric, config.seed)
    sampler = StartSampler(buffer)
    history: list[IterationStats] = []
    for H in range(1, config.H_max + 1):
        frozen = {h: llc_set.policy(h).digest() for h in range(1, H)}
        rng = np.random.default_rng([config.seed, H])
        pretrain(llc_set, buffer, H, config, rng)
        policy = llc_set.policy(H)
        if pretrained is not None:
            pretrained[H] = policy.snapshot()
        opt = GradStep(config.learning_rate, config.gradient_clip).make()
        for it in range(config.M):
            batch = collect_advantages(env, llc_set, sampler, H, config, rng)
            x, a, adv = batch.arrays()
            if len(x) and not np.all(np.isfinite(adv)):
                raise TrainingError("non-finite advantages", {"H": H, "iteration": it})
            used = ppo_positive_update(policy, x, a, adv, config, rng, opt) if len(x) else 0
            mean_q = float(np.mean(batch.returns)) if batch.returns else float("nan")
            stats = IterationStats(H, it, mean_q, -mean_q / H, used, len(batch.values), batch.discarded)
            history.append(stats)
            log.info("H=%d iter=%d mean_return=%.4f positive=%d", H, it, mean_q, used)
            if callback is not None:
                callback(stats, llc_set)
        for h, digest in frozen.items():
            if llc_set.policy(h).digest() != digest:
                raise TrainingError(f"training pi_{H} modified pi_{h}")
    llc_set.metadata["train_config"] = config.to_dict()
    return llc_set, history


def heldout_samples(buffer, H, n, rng):
    """Feasible (start, targets) pairs taken straight from exploration episodes."""
    sampler = StartSampler(buffer)
    out = []
    for _ in range(n):
        e, t = sampler.draw(rng, H)
        states = buffer.states[e]
        out.append((states[t], states[t + 1: t + 1 + H]))
    return out


def tracking_error(env, llc_set: LlcSet, samples) -> float:
    """Mean per-step normalized squared deviation when following with policy means."""
    errs = []
    for s, G in samples:
        _, q, _ = calc_q(env, llc_set, s, G, deterministic=True)
        errs.append(-q / len(G))
    return float(np.mean(errs))
