"""GCN, GAT and GIN encoders with explicit forward and backward passes.

Every encoder stacks ``config.layers`` message-passing layers with ReLU and
dropout between them and no activation after the final layer (the final
representation feeds the reshape projector unconstrained).  Message passing
runs over the symmetric CSR neighbor structure through the kernels package,
so the same code serves the compiled and the numpy backend.

Layer definitions:

* gcn:  Y = norm(A + I) X W + b, with symmetric degree normalization.
* gat:  per head, attention over the true neighbors (softmax of
  leaky-ReLU scores), plus a root transform of the node's own features;
  heads are concatenated and linearly projected back to ``hidden``.
* gin:  Y = MLP((1 + eps) * X + sum of neighbor features), 2-layer MLP.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, TrainingError
from .nn.functional import dropout, leaky_relu, leaky_relu_grad, relu, relu_grad

GNN_KINDS = ("gcn", "gat", "gin")


@dataclass(frozen=True)
class GnnConfig:
    kind: str
    layers: int = 2
    hidden: int = 256
    heads: int = 4
    epsilon_learnable: bool = True
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GNN_KINDS:
            raise ConfigError(f"unknown gnn kind {self.kind!r}")
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ConfigError("layers, hidden and heads must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.kind == "gat" and self.hidden % self.heads != 0:
            raise ConfigError("gat hidden size must be divisible by the head count")


@dataclass
class GnnRepresentation:
    matrix: np.ndarray
    gnn_kind: str
    layer_index: int


class GraphOps:
    """Precomputed message-passing structure for one graph."""

    def __init__(self, indptr, indices, num_nodes):
        self.indptr = indptr
        self.indices = indices
        self.num_nodes = num_nodes
        self.edge_rows = np.repeat(np.arange(num_nodes, dtype=np.int64), np.diff(indptr))
        key = self.edge_rows * num_nodes + indices
        self.reverse = np.searchsorted(key, indices * num_nodes + self.edge_rows)
        deg = np.diff(indptr).astype(np.float64) + 1.0
        inv_sqrt = 1.0 / np.sqrt(deg)
        self.gcn_self = 1.0 / deg
        self.gcn_edge = inv_sqrt[self.edge_rows] * inv_sqrt[indices]

    @classmethod
    def from_graph(cls, graph):
        indptr, indices = graph.csr
        return cls(indptr, indices, graph.num_nodes)

    @classmethod
    def from_dense(cls, adjacency):
        """Build from an N x N matrix; nonzero off-diagonal entries are edges."""
        adjacency = np.asarray(adjacency)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DimensionError("adjacency must be square")
        n = adjacency.shape[0]
        mask = (adjacency != 0) & ~np.eye(n, dtype=bool)
        mask |= mask.T
        rows, cols = np.nonzero(mask)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(indptr, cols.astype(np.int64), n)


def _as_ops(graph_or_adjacency):
    if isinstance(graph_or_adjacency, GraphOps):
        return graph_or_adjacency
    if isinstance(graph_or_adjacency, np.ndarray):
        return GraphOps.from_dense(graph_or_adjacency)
    return GraphOps.from_graph(graph_or_adjacency)


def _glorot(rng, shape):
    std = np.sqrt(2.0 / (shape[0] + shape[1]))
    return rng.normal(0.0, std, size=shape)


def init_gnn_params(config, in_dim):
    """Fresh parameter dict for an encoder reading ``in_dim`` features."""
    rng = np.random.default_rng(config.seed)
    params = {}
    d_in = in_dim
    head_dim = config.hidden // config.heads
    for l in range(config.layers):
        p = f"layers.{l}."
        if config.kind == "gcn":
            params[p + "W"] = _glorot(rng, (d_in, config.hidden))
            params[p + "b"] = np.zeros(config.hidden)
        elif config.kind == "gat":
            params[p + "W"] = _glorot(rng, (d_in, config.hidden))
            params[p + "W_root"] = _glorot(rng, (d_in, config.hidden))
            params[p + "a_src"] = rng.normal(0.0, 0.1, size=(config.heads, head_dim))
            params[p + "a_dst"] = rng.normal(0.0, 0.1, size=(config.heads, head_dim))
            params[p + "proj"] = _glorot(rng, (config.hidden, config.hidden))
            params[p + "b"] = np.zeros(config.hidden)
        else:  # gin
            params[p + "eps"] = np.zeros(())
            params[p + "mlp.0.W"] = _glorot(rng, (d_in, config.hidden))
            params[p + "mlp.0.b"] = np.zeros(config.hidden)
            params[p + "mlp.1.W"] = _glorot(rng, (config.hidden, config.hidden))
            params[p + "mlp.1.b"] = np.zeros(config.hidden)
        d_in = config.hidden
    return params


def _gcn_layer_forward(params, prefix, ops, x):
    s = ops.gcn_self[:, None] * x + kernels.gather_weighted_sum(
        ops.indptr, ops.indices, ops.gcn_edge, x)
    y = s @ params[prefix + "W"] + params[prefix + "b"]
    return y, {"x": x, "s": s}


def _gcn_layer_backward(params, prefix, ops, cache, grad_y):
    grads = {
        prefix + "W": cache["s"].T @ grad_y,
        prefix + "b": grad_y.sum(axis=0),
    }
    grad_s = grad_y @ params[prefix + "W"].T
    grad_x = ops.gcn_self[:, None] * grad_s + kernels.gather_weighted_sum(
        ops.indptr, ops.indices, ops.gcn_edge, grad_s)
    return grads, grad_x


def _gat_layer_forward(params, prefix, ops, x, heads):
    n = x.shape[0]
    z = x @ params[prefix + "W"]
    head_dim = z.shape[1] // heads
    zh = z.reshape(n, heads, head_dim)
    s_src = np.einsum("nhd,hd->nh", zh, params[prefix + "a_src"])
    s_dst = np.einsum("nhd,hd->nh", zh, params[prefix + "a_dst"])
    raw = s_dst[ops.edge_rows] + s_src[ops.indices]
    act = leaky_relu(raw)
    alpha = np.empty_like(act)
    messages = np.empty((n, heads, head_dim))
    for h in range(heads):
        alpha[:, h] = kernels.edge_softmax(ops.indptr, np.ascontiguousarray(act[:, h]))
        messages[:, h, :] = kernels.gather_weighted_sum(
            ops.indptr, ops.indices, np.ascontiguousarray(alpha[:, h]),
            np.ascontiguousarray(zh[:, h, :]))
    m = messages.reshape(n, -1)
    root = x @ params[prefix + "W_root"]
    y = (m + root) @ params[prefix + "proj"] + params[prefix + "b"]
    return y, {"x": x, "zh": zh, "raw": raw, "alpha": alpha, "m": m, "root": root}


def _gat_layer_backward(params, prefix, ops, cache, grad_y, heads):
    x, zh, alpha = cache["x"], cache["zh"], cache["alpha"]
    n, _, head_dim = zh.shape
    grads = {
        prefix + "proj": (cache["m"] + cache["root"]).T @ grad_y,
        prefix + "b": grad_y.sum(axis=0),
    }
    grad_mr = grad_y @ params[prefix + "proj"].T
    grads[prefix + "W_root"] = x.T @ grad_mr
    grad_x = grad_mr @ params[prefix + "W_root"].T
    grad_zh = np.zeros_like(zh)
    grad_a_src = np.zeros((heads, head_dim))
    grad_a_dst = np.zeros((heads, head_dim))
    for h in range(heads):
        grad_m = np.ascontiguousarray(grad_mr[:, h * head_dim:(h + 1) * head_dim])
        z_h = np.ascontiguousarray(zh[:, h, :])
        a_h = np.ascontiguousarray(alpha[:, h])
        grad_alpha = np.einsum("ed,ed->e", grad_m[ops.edge_rows], z_h[ops.indices])
        grad_zh[:, h, :] += kernels.gather_weighted_sum(
            ops.indptr, ops.indices, np.ascontiguousarray(a_h[ops.reverse]), grad_m)
        grad_act = kernels.edge_softmax_backward(ops.indptr, a_h, grad_alpha)
        grad_raw = leaky_relu_grad(np.ascontiguousarray(cache["raw"][:, h]), grad_act)
        grad_s_dst = kernels.segment_sum(ops.indptr, grad_raw)
        grad_s_src = np.bincount(ops.indices, weights=grad_raw, minlength=n)
        grad_zh[:, h, :] += np.outer(grad_s_dst, params[prefix + "a_dst"][h])
        grad_zh[:, h, :] += np.outer(grad_s_src, params[prefix + "a_src"][h])
        grad_a_dst[h] = z_h.T @ grad_s_dst
        grad_a_src[h] = z_h.T @ grad_s_src
    grads[prefix + "a_src"] = grad_a_src
    grads[prefix + "a_dst"] = grad_a_dst
    grad_z = grad_zh.reshape(n, -1)
    grads[prefix + "W"] = x.T @ grad_z
    grad_x += grad_z @ params[prefix + "W"].T
    return grads, grad_x


def _gin_layer_forward(params, prefix, ops, x):
    summed = kernels.gather_sum(ops.indptr, ops.indices, x)
    agg = (1.0 + params[prefix + "eps"]) * x + summed
    pre = agg @ params[prefix + "mlp.0.W"] + params[prefix + "mlp.0.b"]
    hidden = relu(pre)
    y = hidden @ params[prefix + "mlp.1.W"] + params[prefix + "mlp.1.b"]
    return y, {"x": x, "agg": agg, "pre": pre, "hidden": hidden}


def _gin_layer_backward(params, prefix, ops, cache, grad_y, epsilon_learnable):
    grads = {
        prefix + "mlp.1.W": cache["hidden"].T @ grad_y,
        prefix + "mlp.1.b": grad_y.sum(axis=0),
    }
    grad_hidden = grad_y @ params[prefix + "mlp.1.W"].T
    grad_pre = relu_grad(cache["pre"], grad_hidden)
    grads[prefix + "mlp.0.W"] = cache["agg"].T @ grad_pre
    grads[prefix + "mlp.0.b"] = grad_pre.sum(axis=0)
    grad_agg = grad_pre @ params[prefix + "mlp.0.W"].T
    if epsilon_learnable:
        grads[prefix + "eps"] = np.array((grad_agg * cache["x"]).sum())
    grad_x = (1.0 + params[prefix + "eps"]) * grad_agg + kernels.gather_sum(
        ops.indptr, ops.indices, grad_agg)
    return grads, grad_x


def gnn_forward(config, params, graph, features, training=False, rng=None):
    """Run the encoder; returns (GnnRepresentation, cache).

    ``graph`` may be a TextAttributedGraph, a GraphOps bundle, or a dense
    adjacency matrix.  ``features`` is the (N, d) float64 matrix (a
    NodeFeatureMatrix's ``matrix`` attribute or a raw array).  Dropout is
    applied between layers in training mode only.
    """
    ops = _as_ops(graph)
    x = features.matrix if hasattr(features, "matrix") else np.asarray(features, dtype=np.float64)
    if x.shape[0] != ops.num_nodes:
        raise DimensionError(
            f"feature rows ({x.shape[0]}) do not match graph size ({ops.num_nodes})")
    x = np.ascontiguousarray(x, dtype=np.float64)
    cache = {"ops": ops, "layers": [], "relu_pre": [], "drop_masks": []}
    for l in range(config.layers):
        prefix = f"layers.{l}."
        if config.kind == "gcn":
            y, layer_cache = _gcn_layer_forward(params, prefix, ops, x)
        elif config.kind == "gat":
            y, layer_cache = _gat_layer_forward(params, prefix, ops, x, config.heads)
        else:
            y, layer_cache = _gin_layer_forward(params, prefix, ops, x)
        cache["layers"].append(layer_cache)
        if l < config.layers - 1:
            cache["relu_pre"].append(y)
            x = relu(y)
            if training and config.dropout > 0.0:
                if rng is None:
                    raise ConfigError("training-mode forward with dropout needs an rng")
                x, mask = dropout(x, config.dropout, rng)
            else:
                mask = None
            cache["drop_masks"].append(mask)
            x = np.ascontiguousarray(x)
        else:
            x = y
    if not np.isfinite(x).all():
        raise TrainingError(f"{config.kind} forward produced non-finite values")
    rep = GnnRepresentation(matrix=x, gnn_kind=config.kind, layer_index=config.layers - 1)
    return rep, cache


def gnn_backward(config, params, cache, grad_out):
    """Gradients of every named parameter given d loss / d representation."""
    ops = cache["ops"]
    grads = {}
    grad = np.ascontiguousarray(grad_out, dtype=np.float64)
    for l in reversed(range(config.layers)):
        prefix = f"layers.{l}."
        if l < config.layers - 1:
            mask = cache["drop_masks"][l]
            if mask is not None:
                grad = grad * mask
            grad = relu_grad(cache["relu_pre"][l], grad)
            grad = np.ascontiguousarray(grad)
        if config.kind == "gcn":
            layer_grads, grad = _gcn_layer_backward(params, prefix, ops, cache["layers"][l], grad)
        elif config.kind == "gat":
            layer_grads, grad = _gat_layer_backward(
                params, prefix, ops, cache["layers"][l], grad, config.heads)
        else:
            layer_grads, grad = _gin_layer_backward(
                params, prefix, ops, cache["layers"][l], grad, config.epsilon_learnable)
        grads.update(layer_grads)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for tensor {name!r}")
    return grads


def readout(rep):
    """Graph-level representation: mean over node rows."""
    matrix = rep.matrix if isinstance(rep, GnnRepresentation) else np.asarray(rep)
    if matrix.shape[0] == 0:
        raise DimensionError("readout of an empty representation")
    return matrix.mean(axis=0)
