import numpy as np
import numpy.testing as npt

from graphlm.nn.functional import (cross_entropy, dropout, leaky_relu, log_softmax,
                                   relu, softmax)
from graphlm.nn.mlp import init_mlp, mlp_backward, mlp_forward
from graphlm.nn.optim import AdamW


def test_softmax_rows_sum_to_one_and_stable():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 7)) * 200
    s = softmax(x, axis=1)
    npt.assert_allclose(s.sum(axis=1), np.ones(5), atol=1e-12)
    assert np.isfinite(log_softmax(x, axis=1)).all()


def test_cross_entropy_known_value():
    logits = np.log(np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]]))
    loss, _ = cross_entropy(logits, np.array([0, 1]))
    npt.assert_allclose(loss, -(np.log(0.7) + np.log(0.8)) / 2)


def test_cross_entropy_gradient_matches_fd():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 5))
    labels = np.array([0, 3, 2, 1])
    _, grad = cross_entropy(logits, labels)
    for i in range(4):
        for j in range(5):
            h = 1e-6
            lp = logits.copy(); lp[i, j] += h
            lm = logits.copy(); lm[i, j] -= h
            fd = (cross_entropy(lp, labels)[0] - cross_entropy(lm, labels)[0]) / (2 * h)
            assert abs(fd - grad[i, j]) < 1e-8


def test_mlp_gradients_match_fd():
    rng = np.random.default_rng(2)
    params = init_mlp([6, 5, 3], seed=0)
    for v in params.values():
        v += rng.normal(0, 0.05, size=v.shape)
    x = rng.normal(size=(7, 6))
    w = rng.normal(size=(7, 3))
    _, cache = mlp_forward(params, x)
    grads = mlp_backward(params, cache, w)
    for name, p in params.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            h = 1e-6
            orig = flat[i]
            flat[i] = orig + h
            lp = (mlp_forward(params, x)[0] * w).sum()
            flat[i] = orig - h
            lm = (mlp_forward(params, x)[0] * w).sum()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(fd - gflat[i]) <= 1e-6 * max(1.0, abs(fd))


def test_mlp_input_gradient():
    rng = np.random.default_rng(3)
    params = init_mlp([4, 3], seed=1)
    x = rng.normal(size=(2, 4))
    w = rng.normal(size=(2, 3))
    _, cache = mlp_forward(params, x)
    grads = mlp_backward(params, cache, w)
    npt.assert_allclose(grads["input"], w @ params["layers.0.W"].T, atol=1e-12)


def test_adamw_moves_against_gradient():
    params = {"w": np.zeros(3)}
    opt = AdamW(params, lr=0.1)
    opt.step({"w": np.array([1.0, -1.0, 0.0])})
    assert params["w"][0] < 0 < params["w"][1]
    assert params["w"][2] == 0.0


def test_adamw_lr_scale_applies_per_name():
    params = {"a": np.zeros(1), "b": np.zeros(1)}
    opt = AdamW(params, lr=0.1, lr_scale={"b": 16.0})
    opt.step({"a": np.ones(1), "b": np.ones(1)})
    assert abs(params["b"][0]) > abs(params["a"][0]) * 10


def test_adamw_weight_decay_shrinks_params():
    params = {"w": np.full(2, 10.0)}
    opt = AdamW(params, lr=0.1, weight_decay=0.5)
    opt.step({"w": np.zeros(2)})
    assert (params["w"] < 10.0).all()


def test_dropout_scaling_and_determinism():
    rng1 = np.random.default_rng(4)
    rng2 = np.random.default_rng(4)
    x = np.ones((100, 50))
    y1, mask1 = dropout(x, 0.3, rng1)
    y2, _ = dropout(x, 0.3, rng2)
    npt.assert_array_equal(y1, y2)
    assert abs(y1.mean() - 1.0) < 0.05  # inverted dropout keeps the expectation
    assert set(np.unique(mask1)) == {0.0, 1.0 / 0.7}


def test_relu_and_leaky_relu():
    x = np.array([-2.0, 0.0, 3.0])
    npt.assert_array_equal(relu(x), [0.0, 0.0, 3.0])
    npt.assert_allclose(leaky_relu(x), [-0.4, 0.0, 3.0])
