"""Plain multilayer perceptron with explicit forward/backward.

Used for the shared alignment classifier, the MLP baseline and the linear
probes.  Parameters are a flat dict: ``layers.{i}.W`` of shape (in, out)
and ``layers.{i}.b``; ReLU between layers, raw logits at the end.
"""

import numpy as np

from .functional import relu, relu_grad


def init_mlp(dims, seed, scale=None):
    """He-style initialization for layer sizes dims[0] -> ... -> dims[-1]."""
    rng = np.random.default_rng(seed)
    params = {}
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        std = scale if scale is not None else np.sqrt(2.0 / fan_in)
        params[f"layers.{i}.W"] = rng.normal(0.0, std, size=(dims[i], dims[i + 1]))
        params[f"layers.{i}.b"] = np.zeros(dims[i + 1])
    return params


def num_layers(params):
    return sum(1 for k in params if k.endswith(".W"))


def mlp_forward(params, x):
    """Returns (logits, cache) for a batch of rows."""
    n_layers = num_layers(params)
    cache = {"inputs": [], "pre": []}
    h = x
    for i in range(n_layers):
        cache["inputs"].append(h)
        pre = h @ params[f"layers.{i}.W"] + params[f"layers.{i}.b"]
        if i < n_layers - 1:
            cache["pre"].append(pre)
            h = relu(pre)
        else:
            h = pre
    return h, cache


def mlp_backward(params, cache, grad_out):
    """Gradients for every parameter plus the input (returned as 'input')."""
    n_layers = num_layers(params)
    grads = {}
    grad = grad_out
    for i in reversed(range(n_layers)):
        h_in = cache["inputs"][i]
        if i < n_layers - 1:
            grad = relu_grad(cache["pre"][i], grad)
        grads[f"layers.{i}.W"] = h_in.T @ grad
        grads[f"layers.{i}.b"] = grad.sum(axis=0)
        grad = grad @ params[f"layers.{i}.W"].T
    grads["input"] = grad
    return grads
