"""AdamW over named parameter dictionaries."""

import numpy as np


class AdamW:
    """First-order adaptive-moment optimizer with decoupled weight decay.

    ``params`` is a dict of name -> ndarray updated in place.  ``lr_scale``
    maps parameter names to a learning-rate multiplier (used for the
    separate B-matrix rate of LoRA+); unlisted names use multiplier 1.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, lr_scale=None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scale = lr_scale or {}
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads, lr=None):
        """Apply one update from ``grads`` (names matching ``params``)."""
        base_lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, grad in grads.items():
            param = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            step_lr = base_lr * self.lr_scale.get(name, 1.0)
            if self.weight_decay:
                param -= step_lr * self.weight_decay * param
            param -= step_lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
