"""Small numerical helpers shared by the GNNs, the LM and the baselines."""

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(pre, grad):
    return grad * (pre > 0)


def leaky_relu(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(pre, grad, slope=0.2):
    return grad * np.where(pre > 0, 1.0, slope)


def softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def cross_entropy(logits, labels):
    """Mean cross-entropy over rows; returns (loss, grad_logits)."""
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    loss = -logp[np.arange(n), labels].mean()
    grad = softmax(logits, axis=1)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def dropout(x, p, rng):
    """Inverted dropout; returns (output, mask) with mask already scaled."""
    if p <= 0.0:
        return x, None
    keep = rng.random(x.shape) >= p
    mask = keep / (1.0 - p)
    return x * mask, mask
