import numpy as np
import pytest

from gradcheck import check_config
from statereach.errors import TrainingError, UsageError
from statereach.nn import Adam, GaussianPolicy, Mlp, MlpConfig, LOG_2PI


def make_policy(in_dim=3, out_dim=2, hidden=(8,), bounds=None, log_std=0.0, seed=0):
    return GaussianPolicy.create(MlpConfig(in_dim, out_dim, hidden, seed=seed), bounds, log_std)


def test_zero_last_layer_gives_bias(rng):
    pol = make_policy()
    pol.mlp.params[-2][...] = 0.0
    pol.mlp.params[-1][...] = [0.25, -1.5]
    mean, std = pol.forward(rng.normal(size=(5, 3)))
    assert np.array_equal(mean, np.tile([0.25, -1.5], (5, 1)))
    assert np.array_equal(std, np.ones((5, 2)))


def test_single_and_batch_inputs_agree(rng):
    pol = make_policy()
    x = rng.normal(size=(4, 3))
    batch = pol.forward(x)[0]
    for i in range(4):
        np.testing.assert_allclose(pol.forward(x[i])[0], batch[i], rtol=1e-12)


def test_input_dim_mismatch():
    with pytest.raises(UsageError):
        make_policy().forward(np.zeros(4))
    with pytest.raises(UsageError):
        MlpConfig(0, 1)


def test_log_prob_at_mean_and_one_std(rng):
    pol = make_policy(out_dim=3)
    x = rng.normal(size=3)
    mean, _ = pol.forward(x)
    lp = pol.log_prob(x, mean)
    assert lp == pytest.approx(-1.5 * LOG_2PI, abs=1e-12)
    shifted = mean.copy()
    shifted[1] += 1.0
    assert pol.log_prob(x, shifted) == pytest.approx(lp - 0.5, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    assert check_config(np.random.default_rng(seed)) < 1e-4


def test_sample_limits(rng):
    pol = make_policy(log_std=-30.0)
    x = rng.normal(size=3)
    # log_std is floored, so the sample sits within a tiny multiple of exp(-5) of the mean
    pol.log_std[...] = -5.0
    s = pol.sample(x, rng)
    assert np.all(np.abs(s - pol.forward(x)[0]) < 0.05)


def test_sample_mean_within_three_standard_errors(rng):
    pol = make_policy(log_std=-0.5)
    x = rng.normal(size=3)
    n = 100_000
    draws = pol.sample(np.tile(x, (n, 1)), rng)
    mean, std = pol.forward(x)
    se = std / np.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)


def test_clamped_outputs_stay_in_bounds(rng):
    bounds = np.array([[-1.0, 1.0], [-0.2, 0.5]])
    pol = make_policy(bounds=bounds, log_std=1.5)
    s = pol.sample(rng.normal(size=(2000, 3)) * 10, rng)
    assert np.all(s >= bounds[:, 0]) and np.all(s <= bounds[:, 1])
    a = pol.act(rng.normal(size=(50, 3)) * 100)
    assert np.all(a >= bounds[:, 0]) and np.all(a <= bounds[:, 1])


def test_zero_gradient_is_noop():
    pol = make_policy()
    before = pol.digest()
    pol.update([np.zeros_like(p) for p in pol.parameters()])
    assert pol.digest() == before


def test_non_finite_gradient_raises():
    pol = make_policy()
    grads = [np.zeros_like(p) for p in pol.parameters()]
    grads[0][0, 0] = np.nan
    with pytest.raises(TrainingError):
        pol.update(grads)


def test_gradient_clipping_scale():
    p = [np.zeros(4)]
    g = [np.array([10.0, 0.0, 0.0, 0.0])]
    opt = Adam(learning_rate=1e-3, clip_norm=0.5)
    assert opt.step(p, g) == pytest.approx(0.05)
    assert np.allclose(opt.m[0], (1 - 0.9) * 0.05 * g[0])


def test_regression_fit_of_linear_map(rng):
    mlp = Mlp(MlpConfig(1, 1, (8,), seed=0))
    opt = Adam(learning_rate=1e-2, clip_norm=None)
    x = rng.uniform(-1, 1, (256, 1))
    y = 2 * x
    for _ in range(2000):
        cache = []
        out = mlp.forward(x, cache)
        grads = mlp.backward(cache, 2 * (out - y) / len(x))
        opt.step(mlp.params, grads)
    assert np.mean((mlp.forward(x) - y) ** 2) < 1e-3


def test_save_load_roundtrip(tmp_path, rng):
    pol = make_policy(bounds=np.array([[-1, 1], [-2, 2]]), log_std=-0.3)
    pol.save(tmp_path / "p.npz")
    pol.save(tmp_path / "q.npz")
    assert (tmp_path / "p.npz").read_bytes() == (tmp_path / "q.npz").read_bytes()
    back = GaussianPolicy.load(tmp_path / "p.npz")
    assert back.digest() == pol.digest()
    x = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(back.act(x), pol.act(x))


def test_flat_parameters_roundtrip():
    pol = make_policy()
    flat = pol.flat_parameters() + 1.0
    pol.set_flat_parameters(flat)
    assert np.array_equal(pol.flat_parameters(), flat)
    with pytest.raises(UsageError):
        pol.set_flat_parameters(flat[:-1])


def test_snapshot_is_independent():
    pol = make_policy()
    snap = pol.snapshot()
    pol.mlp.params[0] += 1.0
    assert snap.digest() != pol.digest()
