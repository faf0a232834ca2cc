"""Low-rank adapters on named weight matrices.

A weight W stored as (in, out) and used as ``y = x @ W`` receives the
update (alpha/r) * A^T B^T with A of shape (r, in) and B of shape (out, r),
so the adapted product is ``x @ W + scale * (x @ A^T) @ B^T``.  B starts at
zero: a freshly attached adapter leaves the model unchanged.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, StateError
from ..nn.functional import dropout


@dataclass
class LoraAdapter:
    target: str
    A: np.ndarray
    B: np.ndarray
    rank: int
    alpha: float
    dropout: float = 0.0

    @property
    def scaling(self):
        return self.alpha / self.rank

    def delta(self):
        """The (in, out) update added to the stored weight."""
        return self.scaling * (self.A.T @ self.B.T)

    def num_params(self):
        return self.A.size + self.B.size


def attach_lora(params, targets, r=8, alpha=16.0, dropout=0.0, seed=0, existing=None):
    """Create adapters for the named weight matrices.

    A is small-gaussian, B is zero.  Base weights are untouched.  Attaching
    to a target that already has an adapter is a configuration error.
    """
    if r < 1:
        raise ConfigError("lora rank must be at least 1")
    adapters = dict(existing) if existing else {}
    rng = np.random.default_rng(seed)
    for target in targets:
        if target not in params:
            raise ConfigError(f"unknown lora target {target!r}")
        weight = params[target]
        if weight.ndim != 2:
            raise ConfigError(f"lora target {target!r} is not a matrix")
        if target in adapters:
            raise ConfigError(f"adapter already attached to {target!r}")
        n_in, n_out = weight.shape
        adapters[target] = LoraAdapter(
            target=target,
            A=rng.normal(0.0, 0.01, size=(r, n_in)),
            B=np.zeros((n_out, r)),
            rank=r,
            alpha=alpha,
            dropout=dropout,
        )
    return adapters


def adapter_param_dict(adapters):
    """Flat name -> array view over adapter tensors (shared, not copied)."""
    out = {}
    for target, ad in adapters.items():
        out[f"lora.{target}.A"] = ad.A
        out[f"lora.{target}.B"] = ad.B
    return out


def loraplus_lr_scale(adapters, ratio):
    """LoRA+ learning-rate multipliers: B matrices train ``ratio`` x faster."""
    return {f"lora.{target}.B": float(ratio) for target in adapters}


def lora_linear_forward(params, adapters, name, x, training=False, rng=None):
    """x @ W plus the adapter path when one is attached; returns (y, cache)."""
    y = x @ params[name]
    cache = {"x": x, "adapted": False}
    if adapters and name in adapters:
        ad = adapters[name]
        if training and ad.dropout > 0.0:
            xd, mask = dropout(x, ad.dropout, rng)
        else:
            xd, mask = x, None
        u = xd @ ad.A.T
        y = y + ad.scaling * (u @ ad.B.T)
        cache.update({"adapted": True, "xd": xd, "mask": mask, "u": u})
    return y, cache


def lora_linear_backward(params, adapters, name, cache, grad_y, grads):
    """Accumulate base and adapter grads into ``grads``; return grad wrt x."""
    x = cache["x"]
    _accumulate(grads, name, x.T @ grad_y)
    grad_x = grad_y @ params[name].T
    if cache["adapted"]:
        ad = adapters[name]
        _accumulate(grads, f"lora.{name}.B", ad.scaling * (grad_y.T @ cache["u"]))
        grad_u = ad.scaling * (grad_y @ ad.B)
        _accumulate(grads, f"lora.{name}.A", grad_u.T @ cache["xd"])
        grad_xd = grad_u @ ad.A
        if cache["mask"] is not None:
            grad_xd = grad_xd * cache["mask"]
        grad_x = grad_x + grad_xd
    return grad_x


def _accumulate(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


class MergedParameters(dict):
    """Parameter dict flagged so a second merge is rejected."""

    merged = True


def merge_lora(params, adapters):
    """Fold adapters into the base weights; returns a new parameter dict."""
    if getattr(params, "merged", False):
        raise StateError("parameters already contain merged adapters")
    merged = MergedParameters({k: v.copy() for k, v in params.items()})
    for target, ad in adapters.items():
        merged[target] = merged[target] + ad.delta()
    return merged


def trainable_fraction(params, adapters):
    """Share of parameters that train: adapter tensors over everything."""
    adapter_count = sum(ad.num_params() for ad in adapters.values())
    base_count = sum(int(np.asarray(v).size) for v in params.values())
    return adapter_count / (base_count + adapter_count)
