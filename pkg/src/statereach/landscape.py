"""Random 2D slices through an objective landscape.

A slice is spanned by two random orthonormal directions through a center
point (an optimized decision vector or flattened policy weights).  Every
grid cell is evaluated independently with a seed derived from the slice
seed and the cell position.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SimulationDiverged, UsageError
from .parallel import ordered_map

DIVERGED_FLOOR = -1.0e4


@dataclass(frozen=True)
class SliceConfig:
    resolution: int = 41
    extent: float = 1.0
    episodes_per_point: int = 10
    seed: int = 0


@dataclass(frozen=True)
class SliceSpec:
    center: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    resolution: int = 41
    extent: float = 1.0
    episodes_per_point: int = 10
    seed: int = 0

    @property
    def alphas(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.resolution)

    def point(self, alpha, beta) -> np.ndarray:
        return self.center + alpha * self.d1 + beta * self.d2

    def flipped(self) -> SliceSpec:
        return dataclasses.replace(self, d1=-self.d1)


def make_slice_spec(center, rng, config: SliceConfig = SliceConfig()) -> SliceSpec:
    """Two Gram-Schmidt orthonormalized standard-normal directions."""
    center = np.asarray(center, dtype=np.float64).ravel()
    if center.size < 2:
        raise UsageError("a 2D slice needs a center of dimension >= 2")
    if config.resolution < 1:
        raise UsageError("grid resolution must be >= 1")
    while True:
        a = rng.standard_normal(center.size)
        b = rng.standard_normal(center.size)
        d1 = a / np.linalg.norm(a)
        b = b - (b @ d1) * d1
        nb = np.linalg.norm(b)
        # reject nearly parallel draws (angle below 1e-6 rad)
        if nb > 1e-6 * np.linalg.norm(a + b):
            d2 = b / nb
            d2 = d2 - (d2 @ d1) * d1
            d2 /= np.linalg.norm(d2)
            break
    return SliceSpec(center.copy(), d1, d2, config.resolution, config.extent,
                     config.episodes_per_point, config.seed)


@dataclass
class SliceGrid:
    returns: np.ndarray  # (resolution, resolution); rows index alpha, columns beta
    diverged: np.ndarray  # bool mask of the same shape
    alphas: np.ndarray
    betas: np.ndarray
    meta: dict

    @property
    def center_index(self):
        return len(self.alphas) // 2, len(self.betas) // 2

    @property
    def center_value(self) -> float:
        return float(self.returns[self.center_index])

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "mean_return", "diverged_mask"])
            for i, a in enumerate(self.alphas):
                for j, b in enumerate(self.betas):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.returns[i, j])),
                                int(self.diverged[i, j])])
        Path(str(path) + ".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> SliceGrid:
        path = Path(path)
        rows = list(csv.DictReader(open(path, newline="")))
        alphas = np.unique([float(r["alpha"]) for r in rows])
        betas = np.unique([float(r["beta"]) for r in rows])
        ret = np.zeros((len(alphas), len(betas)))
        div = np.zeros_like(ret, dtype=bool)
        for r in rows:
            i = int(np.searchsorted(alphas, float(r["alpha"])))
            j = int(np.searchsorted(betas, float(r["beta"])))
            ret[i, j] = float(r["mean_return"])
            div[i, j] = bool(int(r["diverged_mask"]))
        meta = json.loads(Path(str(path) + ".json").read_text())
        return cls(ret, div, alphas, betas, meta)


def cell_seed(slice_seed, row, col) -> int:
    return int(np.random.SeedSequence([slice_seed, row, col]).generate_state(1)[0])


def _evaluate_cell(cell, spec: SliceSpec, objective):
    i, j = cell
    alphas = spec.alphas
    x = spec.point(alphas[i], alphas[j])
    try:
        value = float(objective(x, cell_seed(spec.seed, i, j)))
    except SimulationDiverged:
        return DIVERGED_FLOOR, True
    if not np.isfinite(value):
        return DIVERGED_FLOOR, True
    return value, value <= DIVERGED_FLOOR


def evaluate_slice(spec: SliceSpec, objective, workers=None) -> SliceGrid:
    """Evaluate ``objective(params, seed)`` on every grid cell."""
    n = spec.resolution
    cells = [(i, j) for i in range(n) for j in range(n)]
    fn = functools.partial(_evaluate_cell, spec=spec, objective=objective)
    results = ordered_map(fn, cells, workers)
    ret = np.zeros((n, n))
    div = np.zeros((n, n), dtype=bool)
    for (i, j), (v, d) in zip(cells, results):
        ret[i, j] = v
        div[i, j] = d
    meta = {"resolution": n, "extent": spec.extent, "episodes_per_point": spec.episodes_per_point,
            "seed": spec.seed, "dim": int(spec.center.size)}
    return SliceGrid(ret, div, spec.alphas, spec.alphas.copy(), meta)


def _run_width(values, center, thresh):
    ok = values >= thresh
    if not ok[center]:
        return 0
    lo = center
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = center
    while hi < len(values) - 1 and ok[hi + 1]:
        hi += 1
    return hi - lo + 1


def basin_threshold(center_value, threshold_fraction) -> float:
    """Return level a cell must reach to count as near-optimal.

    For positive centers this is ``f * c``; for negative ones the cell must
    lie within ``(1 - f) * |c|`` of the center.
    """
    return center_value - (1.0 - threshold_fraction) * abs(center_value)


def basin_width(grid: SliceGrid, threshold_fraction=0.9) -> tuple[int, int]:
    """Cells in the contiguous near-optimal run through the center, per axis."""
    if not 0.0 <= threshold_fraction <= 1.0:
        raise UsageError("threshold_fraction must be in [0, 1]")
    ci, cj = grid.center_index
    thresh = basin_threshold(grid.center_value, threshold_fraction)
    return (_run_width(grid.returns[:, cj], ci, thresh),
            _run_width(grid.returns[ci, :], cj, thresh))


def basin_extent(grid: SliceGrid, threshold_fraction=0.9) -> tuple[float, float]:
    """Basin widths converted to parameter-space length."""
    wa, wb = basin_width(grid, threshold_fraction)
    step = (grid.alphas[-1] - grid.alphas[0]) / max(len(grid.alphas) - 1, 1)
    return wa * step, wb * step


class TrajectoryObjective:
    """Return of an open-loop decision given in range-normalized search coordinates.

    Coordinates are those CMA-ES searches in, so slices through torque and
    target-state decisions are measured in comparable units.
    """

    def __init__(self, env, task, mode, llc_set=None, H=None, T=40):
        from .optimize.offline import DecisionSpace

        self.env, self.task, self.mode, self.llc_set, self.H, self.T = env, task, mode, llc_set, H, T
        self.space = DecisionSpace(env, task, mode, T, None if llc_set is None else llc_set.ranges)

    def __call__(self, coords, seed=None) -> float:
        from .optimize.trajectory import evaluate_trajectory

        decision = self.space.to_decision(coords)
        return evaluate_trajectory(self.env, self.task, decision, self.mode, self.llc_set, self.H, self.T).total


class PolicyObjective:
    """Mean return of a policy (flat weights) over several seeded episodes."""

    def __init__(self, env, task, policy, agent, episodes=10):
        self.env, self.task, self.agent, self.episodes = env, task, agent, episodes
        self.policy = policy.snapshot()

    def __call__(self, flat, seed=0) -> float:
        from .optimize.ppo import policy_return

        pol = self.policy.snapshot()
        pol.set_flat_parameters(flat)
        rng = np.random.default_rng(seed)
        return float(np.mean([policy_return(self.env, self.task, pol, self.agent, rng)
                              for _ in range(self.episodes)]))
