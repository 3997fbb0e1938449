import math

import numpy as np
import pytest

from metainsert import autodiff as ad
from metainsert.autodiff import Tensor, backward
from metainsert.nn import (GaussianHeadOutput, GraphParams, MlpSpec, ParamStore,
                           adam_step, backward_into, gaussian_head_t,
                           gaussian_sample, gaussian_sample_t, grad_check,
                           init_mlp, load_checkpoint, mlp_forward,
                           mlp_forward_np, save_checkpoint)


def make_store(spec, seed=0, prefix="net"):
    store = ParamStore()
    init_mlp(store, prefix, spec, np.random.default_rng(seed))
    return store


def test_single_linear_identity():
    spec = MlpSpec(3, (), 3)
    store = ParamStore()
    store.add("net.w0", np.eye(3))
    store.add("net.b0", np.zeros(3))
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(mlp_forward_np(store, "net", spec, x), x)


def test_zero_weights_returns_bias():
    spec = MlpSpec(2, (4,), 3)
    store = ParamStore()
    store.add("net.w0", np.zeros((2, 4)))
    store.add("net.b0", np.zeros(4))
    store.add("net.w1", np.zeros((4, 3)))
    store.add("net.b1", np.array([1.0, -2.0, 0.5]))
    out = mlp_forward_np(store, "net", spec, np.array([5.0, 7.0]))
    np.testing.assert_allclose(out, [1.0, -2.0, 0.5])


def test_finite_output_for_finite_params(rng):
    spec = MlpSpec(4, (16, 16), 2)
    store = make_store(spec, seed=3)
    out = mlp_forward_np(store, "net", spec, rng.normal(size=(8, 4)))
    assert np.all(np.isfinite(out))


def test_graph_and_plain_forward_agree_exactly(rng):
    spec = MlpSpec(5, (8, 8), 4)
    store = make_store(spec, seed=9)
    x = rng.normal(size=(6, 5))
    taped = mlp_forward(GraphParams(store), "net", spec, Tensor(x))
    assert np.array_equal(taped.value, mlp_forward_np(store, "net", spec, x))


def test_dimension_mismatch_raises():
    spec = MlpSpec(3, (4,), 1)
    store = make_store(spec)
    with pytest.raises(ValueError):
        mlp_forward_np(store, "net", spec, np.zeros(5))


def test_backward_linear_regression_gradient():
    # loss = 0.5*||Wx - y||^2 -> dL/dW = x (Wx - y)^T
    store = ParamStore()
    W = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]])
    store.add("w", W)
    x = np.array([[0.2, -0.7, 1.5]])
    y = np.array([[1.0, 0.0]])
    gp = GraphParams(store)
    pred = ad.matmul(Tensor(x), gp.leaf("w"))
    loss = ad.mul(ad.sum_all(ad.square(ad.sub(pred, Tensor(y)))), 0.5)
    backward_into(loss, gp)
    np.testing.assert_allclose(store.grad("w"), x.T @ (x @ W - y))


def test_unused_parameter_gets_zero_gradient():
    store = ParamStore()
    store.add("used", np.array([2.0]))
    store.add("unused", np.array([5.0]))
    gp = GraphParams(store)
    backward_into(ad.sum_all(ad.square(gp.leaf("used"))), gp)
    np.testing.assert_allclose(store.grad("unused"), [0.0])
    np.testing.assert_allclose(store.grad("used"), [4.0])


def test_grad_check_on_random_mlp_within_tolerance(rng):
    spec = MlpSpec(3, (6, 6), 4)
    store = make_store(spec, seed=5)
    x = rng.normal(size=(4, 3))
    noise = rng.standard_normal((4, 2))

    def loss_fn(gp):
        out = mlp_forward(gp, "net", spec, Tensor(x))
        mean, log_std = gaussian_head_t(out, 2)
        _, _, logp = gaussian_sample_t(mean, log_std, noise, 0.5)
        return ad.mean_all(logp)

    report = grad_check(store, loss_fn, np.random.default_rng(2), eps=1e-5)
    assert report.max_rel_error <= 1e-3
    assert report.passed(1e-3)


def test_grad_check_zero_tolerance_fails_on_nonlinear(rng):
    spec = MlpSpec(2, (5,), 1)
    store = make_store(spec, seed=7)
    x = rng.normal(size=(3, 2))

    def loss_fn(gp):
        return ad.mean_all(ad.tanh(mlp_forward(gp, "net", spec, Tensor(x))))

    report = grad_check(store, loss_fn, np.random.default_rng(0))
    assert report.max_rel_error > 0.0
    assert not report.passed(0.0)


def test_adam_zero_gradient_keeps_parameters():
    store = ParamStore()
    store.add("p", np.array([1.0, -2.0]))
    adam_step(store, lr=0.1)
    np.testing.assert_allclose(store.value("p"), [1.0, -2.0])


def test_adam_constant_gradient_magnitude_approaches_lr():
    store = ParamStore()
    store.add("p", np.array([0.0]))
    g = 0.37
    prev = store.value("p").copy()
    for _ in range(300):
        store.grad("p")[...] = g
        adam_step(store, lr=1e-2)
    last_update = store.value("p") - prev
    # update direction is -sign(g); late-stage magnitude approaches lr
    store.grad("p")[...] = g
    before = store.value("p").copy()
    adam_step(store, lr=1e-2)
    step = store.value("p") - before
    assert step[0] < 0
    assert abs(abs(step[0]) - 1e-2) < 1e-3
    assert last_update[0] < 0


def test_adam_deterministic_across_identical_stores():
    def run():
        store = ParamStore()
        store.add("p", np.array([1.0, 2.0, 3.0]))
        for i in range(5):
            store.grad("p")[...] = [0.1, -0.2, 0.3 * (i + 1)]
            adam_step(store, lr=3e-3)
        return store.value("p").copy()

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_non_finite_gradient():
    store = ParamStore()
    store.add("weights", np.array([1.0]))
    store.grad("weights")[...] = np.nan
    with pytest.raises(ValueError, match="weights"):
        adam_step(store, lr=1e-3)


def test_gaussian_sample_zero_noise_is_squashed_mean():
    head = GaussianHeadOutput(np.array([0.4, -2.0]), np.array([0.0, 0.0]))
    _, action, _ = gaussian_sample(head, np.zeros(2), 2e-3)
    np.testing.assert_allclose(action, 2e-3 * np.tanh(head.mean))
    assert np.all(np.abs(action) < 2e-3)


def test_gaussian_standard_normal_mode_density():
    head = GaussianHeadOutput(np.array([0.0]), np.array([0.0]))
    pre, _, _ = gaussian_sample(head, np.zeros(1), 1.0)
    std = np.exp(head.log_std)
    logp_pre = (-0.5 * math.log(2 * math.pi) - head.log_std
                - 0.5 * ((pre - head.mean) / std) ** 2)
    assert float(logp_pre[0]) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_gaussian_sample_monte_carlo_mean(rng):
    head = GaussianHeadOutput(np.array([0.3]), np.array([-0.5]))
    n = 100_000
    noise = rng.standard_normal((n, 1))
    pre, _, _ = gaussian_sample(
        GaussianHeadOutput(np.full((n, 1), 0.3), np.full((n, 1), -0.5)), noise, 1.0)
    std = math.exp(-0.5)
    assert abs(pre.mean() - 0.3) < 3 * std / math.sqrt(n)


def test_log_std_clamp_applied():
    head = GaussianHeadOutput(np.zeros(2), np.array([-50.0, 50.0]))
    np.testing.assert_allclose(head.log_std, [-20.0, 2.0])


def test_squash_bound_strict(rng):
    head = GaussianHeadOutput(rng.normal(size=100) * 10, rng.normal(size=100))
    _, action, _ = gaussian_sample(head, rng.standard_normal(100), 2e-3)
    assert np.all(np.abs(action) < 2e-3)


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    spec = MlpSpec(4, (8,), 2)
    store = make_store(spec, seed=11)
    store.value("net.w0")[0, 0] = 1.0 / 3.0
    meta = {"seed": 11, "train_step": 42, "dims": [4, 8, 2]}
    path = tmp_path / "ckpt.json"
    save_checkpoint(store, path, meta)
    loaded, meta2 = load_checkpoint(path)
    assert meta2 == meta
    for name in store.names():
        assert np.array_equal(loaded.value(name), store.value(name))


def test_duplicate_parameter_rejected():
    store = ParamStore()
    store.add("p", np.zeros(1))
    with pytest.raises(ValueError):
        store.add("p", np.zeros(1))
