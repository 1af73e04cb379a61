"""Covariance matrix adaptation evolution strategy (maximizing form).

Standard constants and the combined rank-one / rank-mu covariance update
with cumulative step-size adaptation.  Written in-house so the covariance
can be checked for positive definiteness after every update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingError, UsageError


class CmaEs:
    def __init__(self, mean, sigma, popsize=None, seed=0):
        self.mean = np.array(mean, dtype=np.float64)
        n = self.n = self.mean.size
        if n < 1:
            raise UsageError("CMA-ES needs at least one dimension")
        if sigma <= 0:
            raise UsageError("initial step size must be positive")
        self.sigma = float(sigma)
        self.lam = int(popsize or 4 + int(3 * np.log(n)))
        if self.lam < 2:
            raise UsageError("population size must be >= 2")
        self.mu = self.lam // 2
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)

        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))

        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.generation = 0
        self.rng = np.random.default_rng(seed)
        self._z = None

    def ask(self) -> np.ndarray:
        """Draw ``lam`` candidates, shape (lam, n)."""
        self._z = self.rng.standard_normal((self.lam, self.n))
        y = (self._z * self.D) @ self.B.T
        return self.mean + self.sigma * y

    def tell(self, candidates, fitness) -> None:
        """Update from candidates and their fitness (higher is better)."""
        x = np.asarray(candidates, dtype=np.float64)
        f = np.asarray(fitness, dtype=np.float64)
        if x.shape != (self.lam, self.n) or f.shape != (self.lam,):
            raise UsageError("tell() needs one fitness per candidate")
        order = np.argsort(-f, kind="stable")
        y = (x[order[: self.mu]] - self.mean) / self.sigma
        y_w = self.weights @ y
        self.mean = self.mean + self.sigma * y_w
        self.generation += 1

        # C^{-1/2} y_w through the eigenbasis
        c_inv_sqrt_y = self.B @ ((self.B.T @ y_w) / self.D)
        self.ps = (1 - self.cs) * self.ps + np.sqrt(self.cs * (2 - self.cs) * self.mueff) * c_inv_sqrt_y
        ps_norm = np.linalg.norm(self.ps)
        h_sig = ps_norm / np.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chi_n < 1.4 + 2 / (self.n + 1)
        self.pc = (1 - self.cc) * self.pc + h_sig * np.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w

        rank_mu = (y.T * self.weights) @ y
        delta_h = (1 - h_sig) * self.cc * (2 - self.cc)
        self.C = ((1 - self.c1 - self.cmu + self.c1 * delta_h) * self.C
                  + self.c1 * np.outer(self.pc, self.pc) + self.cmu * rank_mu)
        self.C = 0.5 * (self.C + self.C.T)
        self.sigma *= np.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1))
        self._decompose()

    def _decompose(self):
        try:
            np.linalg.cholesky(self.C)
        except np.linalg.LinAlgError:
            raise TrainingError("CMA-ES covariance lost positive definiteness",
                                {"generation": self.generation}) from None
        evals, self.B = np.linalg.eigh(self.C)
        self.D = np.sqrt(np.maximum(evals, 1e-300))

    def is_positive_definite(self) -> bool:
        try:
            np.linalg.cholesky(self.C)
            return True
        except np.linalg.LinAlgError:
            return False


@dataclass
class CmaResult:
    best_x: np.ndarray
    best_f: float
    history: list


def minimize_sphere_check(n=10, popsize=16, iterations=150, seed=0) -> CmaResult:
    """Self-test on f(x) = |x|^2 from x0 = 1."""
    es = CmaEs(np.ones(n), 0.5, popsize, seed)
    best_x, best_f, hist = None, np.inf, []
    for _ in range(iterations):
        x = es.ask()
        f = np.sum(x * x, axis=1)
        es.tell(x, -f)
        i = int(np.argmin(f))
        if f[i] < best_f:
            best_x, best_f = x[i].copy(), float(f[i])
        hist.append(best_f)
    return CmaResult(best_x, best_f, hist)
