"""Central finite-difference oracle shared by unit and acceptance tests."""

import numpy as np

from statereach.nn import GaussianPolicy, MlpConfig

FD_STEP = 1e-5
# entries smaller than this are compared absolutely (relative error is noise there)
REL_FLOOR = 1e-6


def relative_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def numeric_grad(f, param, indices, h=FD_STEP):
    out = []
    for idx in indices:
        old = param[idx]
        param[idx] = old + h
        fp = f()
        param[idx] = old - h
        fm = f()
        param[idx] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def random_policy(rng):
    in_dim = int(rng.integers(1, 8))
    out_dim = int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(2, 9, size=rng.integers(1, 3)))
    cfg = MlpConfig(in_dim, out_dim, hidden, seed=int(rng.integers(1 << 30)))
    pol = GaussianPolicy.create(cfg, init_log_std=float(rng.uniform(-1, 0.5)))
    # non-trivial output layer so the mean actually depends on every weight
    for p in pol.mlp.params:
        p += rng.normal(0, 0.3, p.shape)
    return pol


def check_config(rng, n_entries=6):
    """Max relative error of Mlp output and Gaussian log-prob gradients for one random config."""
    pol = random_policy(rng)
    B = int(rng.integers(1, 5))
    x = rng.normal(size=(B, pol.input_dim))
    a = rng.normal(size=(B, pol.action_dim))
    w = rng.normal(size=B)
    proj = rng.normal(size=(B, pol.action_dim))

    # d(sum proj * mean)/d(weights) through the raw MLP backward pass
    cache = []
    pol.mlp.forward(x, cache)
    g_mean = pol.mlp.backward(cache, proj)

    _, g_logp = pol.log_prob_and_grad(x, a, w)

    worst = 0.0
    for k, p in enumerate(pol.parameters()):
        flat_idx = rng.choice(p.size, size=min(n_entries, p.size), replace=False)
        idx = [np.unravel_index(i, p.shape) for i in flat_idx]
        num = numeric_grad(lambda: float(np.sum(w * pol.log_prob(x, a))), p, idx)
        ana = np.array([g_logp[k][i] for i in idx])
        worst = max(worst, float(relative_error(ana, num).max()))
        if k < len(pol.mlp.params):
            num = numeric_grad(lambda: float(np.sum(proj * pol.mlp.forward(x))), p, idx)
            ana = np.array([g_mean[k][i] for i in idx])
            worst = max(worst, float(relative_error(ana, num).max()))
    return worst
