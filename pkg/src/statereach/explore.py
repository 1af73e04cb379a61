"""Random exploration data for low-level controller training.

Two schemes share one rollout loop: contact-based exploration (short episodes
from randomized states placed at, near or above the ground) and the naive
baseline (long episodes from the default pose with small noise).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, SimulationDiverged, UsageError
from .sim.state import StateRanges

log = logging.getLogger(__name__)

MODES = ("contact_based", "naive")
BRANCH_FREE, BRANCH_CLOSE, BRANCH_GROUND = 0, 1, 2


@dataclass(frozen=True)
class ExplorationConfig:
    mode: str = "contact_based"
    K: int | None = None
    N: int = 100_000
    p_free: float = 0.1
    p_close: float = 0.4
    h_free: float = 1.0
    h_close: float = 0.05
    upright_bias: bool = True
    naive_noise: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown exploration mode {self.mode!r}")
        if self.K is None:
            object.__setattr__(self, "K", 5 if self.mode == "contact_based" else 100)
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.p_free < 0 or self.p_close < 0 or self.p_free + self.p_close > 1:
            raise ConfigError("need p_free, p_close >= 0 and p_free + p_close <= 1")

    def to_dict(self):
        return dataclasses.asdict(self)


def draw_ground_distance(rng, config: ExplorationConfig) -> tuple[int, float]:
    """Return (branch, distance) following the three-way height mixture."""
    r = rng.random()
    if r < config.p_free:
        return BRANCH_FREE, float(rng.uniform(0.0, config.h_free))
    if r < config.p_free + config.p_close:
        return BRANCH_CLOSE, float(rng.uniform(0.0, config.h_close))
    return BRANCH_GROUND, 0.0


def sample_ground_distance(rng, config: ExplorationConfig) -> float:
    return draw_ground_distance(rng, config)[1]


@dataclass(frozen=True)
class InitialDraw:
    state: np.ndarray
    branch: int
    d_ground: float
    blend: float


def draw_initial_state(env, ranges: StateRanges, rng, config: ExplorationConfig,
                       blend: float | None = None) -> InitialDraw:
    branch, d = draw_ground_distance(rng, config)
    spec = env.spec
    layout = spec.layout
    state = ranges.sample(rng)
    lam = 0.0
    if config.upright_bias:
        lam = float(rng.random()) if blend is None else float(blend)
        root = np.concatenate([layout.root_rot, layout.root_vel, layout.root_angvel]).astype(int)
        state[root] = (1.0 - lam) * state[root] + lam * spec.default_pose[root]
    if spec.has_ground:
        state = env.place_at_height(state, d)
    return InitialDraw(state, branch, d, lam)


def sample_initial_state(env, ranges: StateRanges, rng, config: ExplorationConfig) -> np.ndarray:
    return draw_initial_state(env, ranges, rng, config).state


def naive_initial_state(env, rng, config: ExplorationConfig) -> np.ndarray:
    spec = env.spec
    s = spec.default_pose + rng.uniform(-config.naive_noise, config.naive_noise, spec.state_dim)
    s[spec.periodic] = (s[spec.periodic] + np.pi) % (2 * np.pi) - np.pi
    if spec.has_ground:
        s = env.place_at_height(s, max(env.lowest_point(s), 0.0))
    return s


class ExplorationBuffer:
    """Transitions grouped into episodes.

    Episode ``e`` is stored as ``states[e]`` of shape (L+1, state_dim) and
    ``actions[e]`` of shape (L, action_dim), so chaining holds by construction.
    """

    def __init__(self, states, actions, metadata=None):
        self.states = [np.asarray(s, dtype=np.float64) for s in states]
        self.actions = [np.asarray(a, dtype=np.float64) for a in actions]
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.states)

    @property
    def n_transitions(self):
        return sum(len(a) for a in self.actions)

    def transitions(self):
        for e, (s, a) in enumerate(zip(self.states, self.actions)):
            for t in range(len(a)):
                yield e, t, s[t], a[t], s[t + 1]

    def visited_states(self) -> np.ndarray:
        if not self.states:
            return np.zeros((0, 0))
        return np.concatenate(self.states, axis=0)

    def next_states(self) -> np.ndarray:
        return np.concatenate([s[1:] for s in self.states], axis=0)

    def digest(self) -> str:
        h = hashlib.sha256()
        for s, a in zip(self.states, self.actions):
            h.update(np.ascontiguousarray(s).tobytes())
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for e, t, s, a, s2 in self.transitions():
                fields = [str(e), str(t)] + [" ".join(repr(float(x)) for x in v) for v in (s, a, s2)]
                fh.write("\t".join(fields) + "\n")
        meta = dict(self.metadata)
        meta["n_episodes"] = len(self)
        meta["n_transitions"] = self.n_transitions
        meta["digest"] = self.digest()
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> ExplorationBuffer:
        path = Path(path)
        meta = json.loads(Path(str(path) + ".meta.json").read_text())
        episodes: dict[int, list] = {}
        with open(path) as fh:
            for line in fh:
                e, t, s, a, s2 = line.rstrip("\n").split("\t")
                vec = lambda f: np.array([float(x) for x in f.split()])  # noqa: E731
                episodes.setdefault(int(e), []).append((int(t), vec(s), vec(a), vec(s2)))
        states, actions = [], []
        for e in sorted(episodes):
            rows = sorted(episodes[e], key=lambda r: r[0])
            states.append(np.array([rows[0][1]] + [r[3] for r in rows]))
            actions.append(np.array([r[2] for r in rows]))
        buf = cls(states, actions, {k: v for k, v in meta.items()
                                    if k not in ("n_episodes", "n_transitions", "digest")})
        if buf.digest() != meta["digest"]:
            raise UsageError(f"{path}: buffer digest does not match its metadata")
        return buf


def _rollout(env, state, rng, K):
    bounds = env.spec.torque_bounds
    states = [state]
    actions = []
    for _ in range(K):
        a = rng.uniform(bounds[:, 0], bounds[:, 1])
        state = env.simulate(state, a)
        actions.append(a)
        states.append(state)
    return np.array(states), np.array(actions)


def run_exploration(env, config: ExplorationConfig, ranges: StateRanges | None = None) -> ExplorationBuffer:
    """Collect floor(N/K) episodes of K uniformly random actions.

    Termination is ignored.  Episode ``i`` draws from its own stream seeded
    by ``(seed, i)``, so a smaller budget yields a prefix of a larger one.
    """
    if config.N < config.K:
        raise UsageError(f"budget N={config.N} is smaller than episode length K={config.K}")
    if config.mode == "contact_based" and ranges is None:
        raise UsageError("contact-based exploration needs calibrated StateRanges")
    states, actions = [], []
    dropped = 0
    for i in range(config.N // config.K):
        rng = np.random.default_rng([config.seed, i])
        if config.mode == "contact_based":
            s0 = sample_initial_state(env, ranges, rng, config)
        else:
            s0 = naive_initial_state(env, rng, config)
        try:
            s, a = _rollout(env, s0, rng, config.K)
        except SimulationDiverged:
            dropped += 1
            log.warning("exploration episode %d diverged; dropped", i)
            continue
        states.append(s)
        actions.append(a)
    meta = {"env_id": env.spec.env_id, "config": config.to_dict(), "dropped_episodes": dropped,
            "ranges": None if ranges is None else ranges.to_dict()}
    return ExplorationBuffer(states, actions, meta)


@dataclass
class CoverageReport:
    points: np.ndarray  # (n, 4): vx, rot, y, upright
    occupancy: int
    bins: int

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vx", "rot", "y", "upright"])
            for vx, rot, y, up in self.points:
                w.writerow([repr(float(vx)), repr(float(rot)), repr(float(y)), int(up)])


def _axis(values, lo, hi, bins):
    if hi <= lo:
        return np.zeros(len(values), dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def coverage_report(buffer: ExplorationBuffer, env, ranges: StateRanges, bins: int = 50) -> CoverageReport:
    """Scatter points (root x-velocity, rotation, height, upright) and grid occupancy."""
    states = buffer.visited_states()
    if states.size == 0:
        raise UsageError("coverage of an empty buffer is undefined")
    layout = env.spec.layout
    cols = [int(layout.root_vel[0])]
    cols.append(int(layout.root_rot[0]) if layout.n_root_rot else None)
    cols.append(int(layout.root_pos[1]) if layout.n_root_pos > 1 else None)
    pts = np.zeros((len(states), 4))
    cells = np.zeros(len(states), dtype=np.int64)
    for j, c in enumerate(cols):
        if c is None:
            continue
        pts[:, j] = states[:, c]
        cells = cells * bins + _axis(states[:, c], ranges.low[c], ranges.high[c], bins)
    pts[:, 3] = [not env.fallen(s) for s in states]
    return CoverageReport(pts, int(np.unique(cells).size), bins)
