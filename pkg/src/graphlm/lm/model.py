"""Desk-scale decoder-only transformer with explicit backward pass.

Pre-norm blocks: x + attn(LN(x)) followed by x + ffn(LN(x)), learned
positional embeddings, untied output head, ReLU feed-forward.  LoRA
adapters may sit on any stored weight matrix used as ``x @ W``; all
gradients (base and adapter) come out of ``lm_backward`` and the trainer
decides what to update.

Graph tokens enter through ``embed_with_injection``: dummy-token rows of
the looked-up embedding matrix are overwritten by the supplied vectors
before the forward pass, leaving all other rows bit-identical to the
table lookup.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError, InjectionError, TrainingError
from ..nn.functional import relu, relu_grad, softmax
from .lora import lora_linear_backward, lora_linear_forward
from .vocab import dummy_token

LN_EPS = 1e-5


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    embed_width: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_len: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.embed_width % self.heads != 0:
            raise ConfigError("embed width must be divisible by the head count")
        if min(self.vocab_size, self.embed_width, self.layers, self.heads) < 1:
            raise ConfigError("all model dimensions must be positive")


def init_lm_params(config, dummy_ids=()):
    """Fresh parameter dict; dummy-token embedding rows start at zero.

    Those rows are always overwritten by injection before use, and zeroing
    them makes an accidental un-injected dummy easy to spot.
    """
    rng = np.random.default_rng(config.seed)
    e, f = config.embed_width, config.embed_width * config.ffn_mult
    params = {
        "tok_emb": rng.normal(0.0, 0.02, size=(config.vocab_size, e)),
        "pos_emb": rng.normal(0.0, 0.01, size=(config.max_len, e)),
        "ln_f.g": np.ones(e),
        "ln_f.b": np.zeros(e),
        "head.W": rng.normal(0.0, 0.02, size=(e, config.vocab_size)),
    }
    for token_id in dummy_ids:
        params["tok_emb"][token_id] = 0.0
    for l in range(config.layers):
        p = f"layers.{l}."
        params[p + "ln1.g"] = np.ones(e)
        params[p + "ln1.b"] = np.zeros(e)
        params[p + "attn.wq"] = rng.normal(0.0, 0.02, size=(e, e))
        params[p + "attn.wk"] = rng.normal(0.0, 0.02, size=(e, e))
        params[p + "attn.wv"] = rng.normal(0.0, 0.02, size=(e, e))
        params[p + "attn.wo"] = rng.normal(0.0, 0.02, size=(e, e))
        params[p + "ln2.g"] = np.ones(e)
        params[p + "ln2.b"] = np.zeros(e)
        params[p + "ffn.w1"] = rng.normal(0.0, 0.02, size=(e, f))
        params[p + "ffn.b1"] = np.zeros(f)
        params[p + "ffn.w2"] = rng.normal(0.0, 0.02, size=(f, e))
        params[p + "ffn.b2"] = np.zeros(e)
    return params


def embed_with_injection(params, vocab, ids, blocks=(), positions=None):
    """Embedding lookup with graph-token rows overwritten in place.

    ``positions`` maps placeholder names to token positions (one entry per
    injected vector, strictly increasing).  Every dummy id present in
    ``ids`` must be covered, and every position must hold the matching
    dummy token.
    """
    ids = np.asarray(ids, dtype=np.int64)
    positions = positions or {}
    total = sum(len(b.vectors) for b in blocks)
    if total != len(positions):
        raise InjectionError(
            f"{total} graph-token vectors but {len(positions)} recorded positions")
    last = -1
    for pos in positions.values():
        if pos <= last:
            raise InjectionError("dummy positions must be strictly increasing")
        last = pos
    out = params["tok_emb"][ids].copy()
    covered = set()
    for block in blocks:
        for i, vec in enumerate(block.vectors):
            name = dummy_token(block.gnn_index, i)
            if name not in positions:
                raise InjectionError(f"no recorded position for placeholder {name}")
            pos = positions[name]
            if not 0 <= pos < len(ids):
                raise InjectionError(f"position {pos} outside the sequence")
            if vocab is not None and vocab.tokens[ids[pos]] != name:
                raise InjectionError(
                    f"position {pos} holds {vocab.tokens[ids[pos]]!r}, expected {name}")
            if vec.shape[0] != out.shape[1]:
                raise DimensionError(
                    f"graph-token width {vec.shape[0]} != embedding width {out.shape[1]}")
            out[pos] = vec
            covered.add(pos)
    if vocab is not None:
        for pos, token_id in enumerate(ids):
            if vocab.is_dummy(int(token_id)) and pos not in covered:
                raise InjectionError(
                    f"dummy token at position {pos} would reach the model uninjected")
    return out


def _layernorm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, {"xhat": xhat, "inv": inv, "g": g}


def _layernorm_backward(cache, grad_y):
    xhat, inv, g = cache["xhat"], cache["inv"], cache["g"]
    grad_g = (grad_y * xhat).sum(axis=0)
    grad_b = grad_y.sum(axis=0)
    gx = grad_y * g
    grad_x = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return grad_x, grad_g, grad_b


def lm_forward(params, adapters, embedded, config, training=False, rng=None):
    """Causal forward pass over one embedded sequence; returns (logits, cache)."""
    seq_len, e = embedded.shape
    if e != config.embed_width:
        raise DimensionError(f"embedded width {e} != model width {config.embed_width}")
    if seq_len > config.max_len:
        raise DimensionError(f"sequence of {seq_len} exceeds max length {config.max_len}")
    heads, dh = config.heads, config.embed_width // config.heads
    scale = 1.0 / np.sqrt(dh)
    tri = np.triu_indices(seq_len, k=1)
    x = embedded + params["pos_emb"][:seq_len]
    cache = {"layers": [], "seq_len": seq_len}
    for l in range(config.layers):
        p = f"layers.{l}."
        lc = {"x_in": x}
        a, lc["ln1"] = _layernorm_forward(x, params[p + "ln1.g"], params[p + "ln1.b"])
        lc["a"] = a
        q, lc["wq"] = lora_linear_forward(params, adapters, p + "attn.wq", a, training, rng)
        kk, lc["wk"] = lora_linear_forward(params, adapters, p + "attn.wk", a, training, rng)
        v, lc["wv"] = lora_linear_forward(params, adapters, p + "attn.wv", a, training, rng)
        qh = q.reshape(seq_len, heads, dh)
        kh = kk.reshape(seq_len, heads, dh)
        vh = v.reshape(seq_len, heads, dh)
        scores = np.einsum("thd,shd->hts", qh, kh) * scale
        scores[:, tri[0], tri[1]] = -np.inf
        att = softmax(scores, axis=-1)
        zh = np.einsum("hts,shd->thd", att, vh)
        lc.update({"qh": qh, "kh": kh, "vh": vh, "att": att, "zh": zh})
        z = zh.reshape(seq_len, e)
        o, lc["wo"] = lora_linear_forward(params, adapters, p + "attn.wo", z, training, rng)
        x = x + o
        lc["x_mid"] = x
        bnorm, lc["ln2"] = _layernorm_forward(x, params[p + "ln2.g"], params[p + "ln2.b"])
        lc["bnorm"] = bnorm
        pre, lc["w1"] = lora_linear_forward(params, adapters, p + "ffn.w1", bnorm, training, rng)
        pre = pre + params[p + "ffn.b1"]
        hidden = relu(pre)
        lc["pre"], lc["hidden"] = pre, hidden
        f_out, lc["w2"] = lora_linear_forward(params, adapters, p + "ffn.w2", hidden, training, rng)
        f_out = f_out + params[p + "ffn.b2"]
        x = x + f_out
        if not np.isfinite(x).all():
            raise TrainingError(f"non-finite activation after layer {l}")
        cache["layers"].append(lc)
    y, cache["ln_f"] = _layernorm_forward(x, params["ln_f.g"], params["ln_f.b"])
    cache["y"] = y
    logits, cache["head"] = lora_linear_forward(params, adapters, "head.W", y, training, rng)
    return logits, cache


def lm_backward(params, adapters, config, cache, grad_logits):
    """Gradients for every parameter and adapter tensor plus the embedding.

    Returns a dict that also carries ``embedded``: d loss / d input rows
    (before the positional embedding is added).
    """
    heads, dh = config.heads, config.embed_width // config.heads
    scale = 1.0 / np.sqrt(dh)
    seq_len = cache["seq_len"]
    e = config.embed_width
    grads = {}
    grad_y = lora_linear_backward(params, adapters, "head.W", cache["head"], grad_logits, grads)
    grad_x, gg, gb = _layernorm_backward(cache["ln_f"], grad_y)
    grads["ln_f.g"], grads["ln_f.b"] = gg, gb
    for l in reversed(range(config.layers)):
        p = f"layers.{l}."
        lc = cache["layers"][l]
        # feed-forward block
        grad_f = grad_x
        grads[p + "ffn.b2"] = grad_f.sum(axis=0)
        grad_hidden = lora_linear_backward(params, adapters, p + "ffn.w2", lc["w2"], grad_f, grads)
        grad_pre = relu_grad(lc["pre"], grad_hidden)
        grads[p + "ffn.b1"] = grad_pre.sum(axis=0)
        grad_bnorm = lora_linear_backward(params, adapters, p + "ffn.w1", lc["w1"], grad_pre, grads)
        grad_mid, gg, gb = _layernorm_backward(lc["ln2"], grad_bnorm)
        grads[p + "ln2.g"], grads[p + "ln2.b"] = gg, gb
        grad_x = grad_x + grad_mid
        # attention block
        grad_o = grad_x
        grad_z = lora_linear_backward(params, adapters, p + "attn.wo", lc["wo"], grad_o, grads)
        grad_zh = grad_z.reshape(seq_len, heads, dh)
        grad_att = np.einsum("thd,shd->hts", grad_zh, lc["vh"])
        grad_vh = np.einsum("hts,thd->shd", lc["att"], grad_zh)
        att = lc["att"]
        grad_scores = att * (grad_att - (grad_att * att).sum(axis=-1, keepdims=True))
        grad_qh = np.einsum("hts,shd->thd", grad_scores, lc["kh"]) * scale
        grad_kh = np.einsum("hts,thd->shd", grad_scores, lc["qh"]) * scale
        grad_a = lora_linear_backward(params, adapters, p + "attn.wq", lc["wq"],
                                      grad_qh.reshape(seq_len, e), grads)
        grad_a += lora_linear_backward(params, adapters, p + "attn.wk", lc["wk"],
                                       grad_kh.reshape(seq_len, e), grads)
        grad_a += lora_linear_backward(params, adapters, p + "attn.wv", lc["wv"],
                                       grad_vh.reshape(seq_len, e), grads)
        grad_in, gg, gb = _layernorm_backward(lc["ln1"], grad_a)
        grads[p + "ln1.g"], grads[p + "ln1.b"] = gg, gb
        grad_x = grad_x + grad_in
    # prefix of the positional table actually used; callers training the
    # base model must scatter it into the full (max_len, e) shape
    grads["pos_emb_prefix"] = grad_x
    grads["embedded"] = grad_x
    return grads
