"""Per-run learning curves and the min-max normalized score table."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import UsageError

RECORD_COLUMNS = ("iteration", "env_steps", "mean_return", "std_return")


@dataclass
class RunRecord:
    env_id: str
    task_id: str
    action_space: str  # "baseline", "llc_naive", "llc_contact", ...
    optimizer: str
    H: int | None
    seed: int
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, iteration, env_steps, mean_return, std_return=0.0):
        if self.rows and env_steps < self.rows[-1][1]:
            raise UsageError("env_steps must not decrease across iterations")
        self.rows.append((int(iteration), int(env_steps), float(mean_return), float(std_return)))

    @property
    def budget(self) -> int:
        return self.rows[-1][1] if self.rows else 0

    @property
    def final_return(self) -> float:
        if not self.rows:
            raise UsageError("run record has no iterations")
        return self.rows[-1][2]

    def meta(self) -> dict:
        return {"env_id": self.env_id, "task_id": self.task_id, "action_space": self.action_space,
                "optimizer": self.optimizer, "H": self.H, "seed": self.seed, **self.extra}

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for it, steps, m, sd in self.rows:
                w.writerow([it, steps, repr(m), repr(sd)])
        Path(str(path) + ".json").write_text(json.dumps(self.meta(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> RunRecord:
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        keys = ("env_id", "task_id", "action_space", "optimizer", "H", "seed")
        rec = cls(**{k: meta[k] for k in keys}, extra={k: v for k, v in meta.items() if k not in keys})
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec.add(int(row["iteration"]), int(row["env_steps"]),
                        float(row["mean_return"]), float(row["std_return"]))
        return rec


def normalized_scores(records) -> list[float]:
    """Min-max score of each record's final return within its (env, task) group."""
    groups = defaultdict(list)
    for i, r in enumerate(records):
        groups[(r.env_id, r.task_id)].append(i)
    scores = [0.0] * len(records)
    for key, idx in groups.items():
        if len(idx) < 2:
            raise UsageError(f"group env={key[0]} task={key[1]} has a single run; "
                             "min-max normalization is undefined")
        vals = np.array([records[i].final_return for i in idx])
        lo, hi = vals.min(), vals.max()
        for i, v in zip(idx, vals):
            # a group whose runs all tie scores 0 by convention
            scores[i] = 0.0 if hi == lo else float((v - lo) / (hi - lo))
    return scores


def aggregate_scores(records) -> list[dict]:
    """Average normalized score per (optimizer, action_space, H)."""
    records = list(records)
    scores = normalized_scores(records)
    cells = defaultdict(list)
    for r, s in zip(records, scores):
        cells[(r.optimizer, r.action_space, r.H)].append((s, r.budget))
    table = []
    for (opt, space, H), vals in sorted(cells.items(), key=lambda kv: tuple(str(k) for k in kv[0])):
        sc = np.array([v[0] for v in vals])
        table.append({"optimizer": opt, "action_space": space, "H": H, "score": float(sc.mean()),
                      "n_runs": len(vals), "mean_budget": float(np.mean([v[1] for v in vals]))})
    return table


def write_score_table(table, path) -> None:
    cols = ("optimizer", "action_space", "H", "score", "n_runs", "mean_budget")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table:
            w.writerow(["" if row[c] is None else row[c] for c in cols])
