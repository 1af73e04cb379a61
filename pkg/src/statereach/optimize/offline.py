"""Offline trajectory optimization with CMA-ES."""

from __future__ import annotations

import dataclasses
import functools
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import UsageError
from ..parallel import ordered_map
from ..sim.tasks import initial_state
from .cma import CmaEs
from .records import RunRecord
from .trajectory import as_decision, check_mode, decision_bounds, evaluate_trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CmaConfig:
    horizon_seconds: float = 4.0
    popsize: int = 16
    iterations: int = 100
    sigma0: float = 0.3  # in units of each decision entry's range
    H: int | None = None
    seed: int = 0
    workers: int | None = None

    @classmethod
    def full_scale(cls, **kw):
        return cls(popsize=32, iterations=200, **kw)

    def steps(self, control_period) -> int:
        T = int(round(self.horizon_seconds / control_period))
        if T < 1:
            raise UsageError("trajectory horizon must cover at least one control step")
        return T

    def to_dict(self):
        return dataclasses.asdict(self)


class DecisionSpace:
    """Affine map between CMA-ES coordinates and clipped decision vectors."""

    def __init__(self, env, task, mode, T, ranges=None):
        self.bounds = decision_bounds(env, mode, T, ranges)
        self.scale = self.bounds[:, 1] - self.bounds[:, 0]
        if mode == "torque":
            self.origin = np.zeros(len(self.bounds))
        else:
            self.origin = np.tile(initial_state(env, task), T)
        self.origin = np.clip(self.origin, self.bounds[:, 0], self.bounds[:, 1])

    def to_decision(self, y):
        return np.clip(self.origin + self.scale * y, self.bounds[:, 0], self.bounds[:, 1])

    def to_coords(self, decision):
        return (np.asarray(decision, dtype=np.float64).ravel() - self.origin) / self.scale


def _evaluate(decision, env, task, mode, llc_set, H, T):
    return evaluate_trajectory(env, task, decision, mode, llc_set, H, T)


def cma_es_offline(env, task, mode="torque", llc_set=None, config: CmaConfig = CmaConfig(),
                   action_space=None, callback=None):
    """Optimize a T-step open-loop decision; returns (best decision (T, dim), RunRecord)."""
    check_mode(mode, llc_set)
    T = config.steps(env.spec.control_period)
    H = config.H if config.H is not None else (llc_set.H_max if llc_set is not None else None)
    space = DecisionSpace(env, task, mode, T, None if llc_set is None else llc_set.ranges)
    es = CmaEs(np.zeros(len(space.bounds)), config.sigma0, config.popsize, config.seed)
    evaluate = functools.partial(_evaluate, env=env, task=task, mode=mode, llc_set=llc_set, H=H, T=T)

    record = RunRecord(env.spec.env_id, task.task_id, action_space or mode, "cma",
                       H if mode == "llc" else None, config.seed)
    best_decision = space.to_decision(np.zeros(len(space.bounds)))
    best_return = -np.inf
    env_steps = 0
    best_curve = []
    for it in range(config.iterations):
        coords = es.ask()
        decisions = [space.to_decision(y) for y in coords]
        results = ordered_map(evaluate, decisions, config.workers)
        returns = np.array([r.total for r in results])
        env_steps += sum(r.steps for r in results)
        es.tell(coords, returns)
        i = int(np.argmax(returns))
        if returns[i] > best_return:
            best_return = float(returns[i])
            best_decision = decisions[i]
        best_curve.append(best_return)
        record.add(it, env_steps, float(returns.mean()), float(returns.std()))
        log.debug("cma iter=%d mean=%.4f best=%.4f sigma=%.4g", it, returns.mean(), best_return, es.sigma)
        if callback is not None:
            callback(it, es, returns)
    record.extra.update({"best_return": best_return, "best_curve": best_curve,
                         "config": config.to_dict(), "T": T})
    return as_decision(best_decision, env, mode, T), record
