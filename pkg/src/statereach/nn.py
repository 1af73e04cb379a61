"""Dense MLPs with hand-written backprop, a diagonal Gaussian head and Adam.

Everything is float64 numpy.  Networks take either a single input vector or
a batch ``(B, input_dim)``; outputs follow the same convention.
"""

from __future__ import annotations

import copy
import hashlib
import io
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, UsageError

FORMAT_VERSION = 1
ACTIVATIONS = ("swish",)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = np.log(2.0 * np.pi)

# hidden-layer presets; the humanoid-scale one is kept for completeness
SMALL_HIDDEN = (64, 64)
LARGE_HIDDEN = (128, 128, 128)


def swish(x):
    return x / (1.0 + np.exp(-x))


def swish_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s + x * s * (1.0 - s)


def orthogonal(rng, shape, gain=1.0):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden_layers: tuple[int, ...] = SMALL_HIDDEN
    activation: str = "swish"
    weight_init: str = "orthogonal"
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_layers):
            raise UsageError(f"invalid MLP dimensions in {self}")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unsupported activation {self.activation!r}")


class Mlp:
    def __init__(self, config: MlpConfig, weights=None):
        self.config = config
        dims = (config.input_dim, *config.hidden_layers, config.output_dim)
        if weights is None:
            rng = np.random.default_rng(config.seed)
            weights = []
            n = len(dims) - 1
            for i in range(n):
                gain = 0.01 if i == n - 1 else np.sqrt(2.0)
                weights.append(orthogonal(rng, (dims[i], dims[i + 1]), gain))
                weights.append(np.zeros(dims[i + 1]))
        self.params = [np.array(w, dtype=np.float64) for w in weights]
        for i in range(len(dims) - 1):
            if self.params[2 * i].shape != (dims[i], dims[i + 1]):
                raise UsageError("weight shapes do not match config")

    @property
    def n_layers(self):
        return len(self.params) // 2

    def forward(self, x, cache=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.config.input_dim:
            raise UsageError(f"input dim {x.shape[-1]} != {self.config.input_dim}")
        h = x
        for i in range(self.n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w + b
            if cache is not None:
                cache.append((h, z))
            h = swish(z) if i < self.n_layers - 1 else z
        return h

    def backward(self, cache, grad_out):
        """Parameter gradients given d(loss)/d(output) for a batch."""
        grads = [None] * len(self.params)
        g = grad_out
        for i in reversed(range(self.n_layers)):
            h, z = cache[i]
            if i < self.n_layers - 1:
                g = g * swish_grad(z)
            grads[2 * i] = h.T @ g if h.ndim == 2 else np.outer(h, g)
            grads[2 * i + 1] = g.sum(axis=0) if g.ndim == 2 else g.copy()
            g = g @ self.params[2 * i].T
        return grads


class Adam:
    """Adam with global-norm gradient clipping."""

    def __init__(self, learning_rate=3e-4, clip_norm=0.5, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        self.lr = learning_rate
        self.clip_norm = clip_norm
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads):
        """Apply one update in place; returns the clip scale that was used.

        An all-zero gradient leaves parameters and moment estimates untouched.
        """
        flat = [np.asarray(g, dtype=np.float64) for g in grads]
        if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
            raise UsageError("gradient shapes do not match parameters")
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in flat))
        if not np.isfinite(norm):
            bad = [i for i, g in enumerate(flat) if not np.all(np.isfinite(g))]
            raise TrainingError("non-finite gradient", {"param_indices": bad, "norm": norm})
        if norm == 0.0:
            return 0.0
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, flat, self.m, self.v):
            g = g * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
        return scale


def _write_npz(path, arrays) -> None:
    """``np.savez`` layout with fixed zip timestamps, so equal weights give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


@dataclass
class GradStep:
    learning_rate: float = 3e-4
    gradient_clip_norm: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999

    def make(self) -> Adam:
        return Adam(self.learning_rate, self.gradient_clip_norm, self.beta1, self.beta2)


@dataclass
class GaussianPolicy:
    mlp: Mlp
    log_std: np.ndarray
    action_bounds: np.ndarray | None = None
    optimizer: Adam | None = field(default=None, repr=False)

    @classmethod
    def create(cls, config: MlpConfig, action_bounds=None, init_log_std=0.0, step=None):
        log_std = np.full(config.output_dim, float(init_log_std))
        bounds = None if action_bounds is None else np.asarray(action_bounds, dtype=np.float64)
        return cls(Mlp(config), log_std, bounds, (step or GradStep()).make())

    @property
    def input_dim(self):
        return self.mlp.config.input_dim

    @property
    def action_dim(self):
        return self.mlp.config.output_dim

    def parameters(self):
        return [*self.mlp.params, self.log_std]

    def forward(self, x):
        mean = self.mlp.forward(x)
        std = np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))
        return mean, np.broadcast_to(std, mean.shape).copy()

    def act(self, x):
        """Deterministic action: the clamped mean."""
        mean = self.mlp.forward(x)
        return self._clamp(mean)

    def _clamp(self, a):
        if self.action_bounds is None:
            return a
        return np.clip(a, self.action_bounds[:, 0], self.action_bounds[:, 1])

    def sample(self, x, rng):
        mean, std = self.forward(x)
        return self._clamp(mean + std * rng.standard_normal(mean.shape))

    def log_prob(self, x, action):
        mean, _ = self.forward(x)
        return self._log_prob_from_mean(mean, action)

    def _log_prob_from_mean(self, mean, action):
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        z = (np.asarray(action) - mean) * np.exp(-log_std)
        d = mean.shape[-1]
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * d * LOG_2PI

    def entropy(self):
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        return float(np.sum(log_std) + 0.5 * self.action_dim * (1.0 + LOG_2PI))

    def log_prob_and_grad(self, x, action, weights):
        """Batched log-probs and the gradient of ``sum_i weights_i * logp_i``.

        The gradient list is aligned with :meth:`parameters`.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        cache = []
        mean = self.mlp.forward(x, cache)
        logp = self._log_prob_from_mean(mean, action)
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        inv_var = np.exp(-2.0 * log_std)
        diff = action - mean
        dmean = weights[:, None] * diff * inv_var
        dlog_std = np.sum(weights[:, None] * (diff * diff * inv_var - 1.0), axis=0)
        inside = (self.log_std > LOG_STD_MIN) & (self.log_std < LOG_STD_MAX)
        grads = self.mlp.backward(cache, dmean)
        grads.append(dlog_std * inside)
        return logp, grads

    def update(self, loss_gradient):
        """One clipped optimizer step on the loss gradient (aligned with parameters())."""
        if self.optimizer is None:
            self.optimizer = GradStep().make()
        scale = self.optimizer.step(self.parameters(), loss_gradient)
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)
        return scale

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != sum(p.size for p in self.parameters()):
            raise UsageError("flat parameter vector has the wrong length")
        offset = 0
        for p in self.parameters():
            n = p.size
            p[...] = flat[offset: offset + n].reshape(p.shape)
            offset += n

    def snapshot(self) -> GaussianPolicy:
        """Deep copy without optimizer state."""
        return GaussianPolicy(copy.deepcopy(self.mlp), self.log_std.copy(),
                              None if self.action_bounds is None else self.action_bounds.copy(),
                              None)

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        cfg = self.mlp.config
        arrays = {
            "format_version": np.array(FORMAT_VERSION),
            "activation": np.array(cfg.activation),
            "weight_init": np.array(cfg.weight_init),
            "seed": np.array(cfg.seed),
            "dims": np.array([cfg.input_dim, *cfg.hidden_layers, cfg.output_dim]),
            "log_std": self.log_std,
        }
        if self.action_bounds is not None:
            arrays["action_bounds"] = self.action_bounds
        for i, p in enumerate(self.mlp.params):
            arrays[f"param_{i}"] = p
        _write_npz(path, arrays)

    @classmethod
    def load(cls, path, step=None) -> GaussianPolicy:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != FORMAT_VERSION:
                raise UsageError(f"unsupported weight file version {version}")
            dims = [int(d) for d in data["dims"]]
            cfg = MlpConfig(dims[0], dims[-1], tuple(dims[1:-1]), str(data["activation"]),
                            str(data["weight_init"]), int(data["seed"]))
            params = [data[f"param_{i}"].copy() for i in range(2 * (len(dims) - 1))]
            bounds = data["action_bounds"].copy() if "action_bounds" in data else None
            log_std = data["log_std"].copy()
        return cls(Mlp(cfg, params), log_std, bounds, (step or GradStep()).make())
