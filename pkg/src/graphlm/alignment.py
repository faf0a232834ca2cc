"""Stage 1: train several GNN encoders against one shared classifier.

Each encoder's output is reshaped by a per-encoder linear projector into a
vector of length t*e (t graph tokens of the LM's embedding width e); the
shared MLP classifier consumes the reshaped vectors, aligning the encoders
in one space.  Training alternates between encoders (round-robin, per epoch
or per batch) and the classifier is frozen from a configured epoch onward.
After training everything is frozen and packed into a checkpoint used for
graph-token extraction.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .checkpointing import config_digest, load_checkpoint, save_checkpoint
from .errors import ConfigError, StateError, TrainingError
from .gnn import GnnConfig, GraphOps, gnn_backward, gnn_forward, init_gnn_params, readout
from .graphtokens import GraphTokenBlock, segment_tokens
from .nn.functional import cross_entropy, softmax
from .nn.mlp import init_mlp, mlp_backward, mlp_forward
from .nn.optim import AdamW


@dataclass(frozen=True)
class AlignmentConfig:
    tokens_per_node: int = 8          # t
    embed_width: int = 64             # e, must equal the LM's embedding width
    epochs: int = 100
    freeze_epoch: int = -1            # -1: half of the epochs
    gnn_lr: float = 2e-4
    classifier_lr: float = 2e-4
    weight_decay: float = 1e-3
    classifier_hidden: int = 64
    classifier_input: str = "reshaped"   # "reshaped" (t*e) or "hidden"
    alternation: str = "per-epoch"       # or "per-batch"
    batch_size: int = 32                 # per-batch alternation only
    shared_classifier: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tokens_per_node < 1 or self.embed_width < 1:
            raise ConfigError("tokens_per_node and embed_width must be positive")
        if self.classifier_input not in ("reshaped", "hidden"):
            raise ConfigError(f"unknown classifier input {self.classifier_input!r}")
        if self.alternation not in ("per-epoch", "per-batch"):
            raise ConfigError(f"unknown alternation mode {self.alternation!r}")

    @property
    def resolved_freeze_epoch(self):
        return self.epochs // 2 if self.freeze_epoch < 0 else self.freeze_epoch


def reshape_tokens(h, projectors, gnn_index):
    """Affine map of one hidden vector into graph-token space (length t*e)."""
    key = f"proj.{gnn_index}.W"
    if key not in projectors:
        raise ConfigError(f"no projector for gnn index {gnn_index}")
    return h @ projectors[key] + projectors[f"proj.{gnn_index}.b"]


class AlignmentCheckpoint:
    """Frozen stage-1 state: encoder, projector and classifier tensors."""

    def __init__(self, gnn_configs, gnn_params, projectors, classifiers,
                 config, feature_dim, num_classes, seed, log, frozen=True):
        self.gnn_configs = list(gnn_configs)
        self.gnn_params = [dict(p) for p in gnn_params]
        self.projectors = dict(projectors)
        self.classifiers = [dict(c) for c in classifiers]
        self.config = config
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.seed = seed
        self.log = list(log)
        self.frozen = frozen

    @property
    def num_gnns(self):
        return len(self.gnn_configs)

    def classifier_for(self, gnn_index):
        return self.classifiers[0] if self.config.shared_classifier else self.classifiers[gnn_index]

    def config_digest(self):
        payload = {
            "alignment": asdict(self.config),
            "gnns": [asdict(c) for c in self.gnn_configs],
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
        }
        return config_digest(payload)

    def representations(self, graph, features, gnn_index):
        """Eval-mode (dropout-off) node representations of one encoder."""
        rep, _ = gnn_forward(self.gnn_configs[gnn_index],
                             self.gnn_params[gnn_index], graph, features)
        return rep

    def reshaped(self, graph, features, gnn_index):
        rep = self.representations(graph, features, gnn_index)
        return reshape_tokens(rep.matrix, self.projectors, gnn_index)

    def node_probabilities(self, graph, features, gnn_index):
        """Per-node class probabilities of encoder + (its) classifier."""
        if self.config.classifier_input == "reshaped":
            feats = self.reshaped(graph, features, gnn_index)
        else:
            feats = self.representations(graph, features, gnn_index).matrix
        logits, _ = mlp_forward(self.classifier_for(gnn_index), feats)
        return softmax(logits, axis=1)

    def _tensors(self):
        tensors = {}
        for k, params in enumerate(self.gnn_params):
            for name, arr in params.items():
                tensors[f"gnn.{k}.{name}"] = arr
        tensors.update(self.projectors)
        for k, params in enumerate(self.classifiers):
            for name, arr in params.items():
                tensors[f"clf.{k}.{name}"] = arr
        return tensors

    def save(self, path):
        manifest = {
            "kind": "alignment",
            "config": asdict(self.config),
            "gnn_configs": [asdict(c) for c in self.gnn_configs],
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "frozen": self.frozen,
            "config_digest": self.config_digest(),
            "log": self.log,
        }
        save_checkpoint(path, manifest, self._tensors())

    @classmethod
    def load(cls, path):
        manifest, tensors = load_checkpoint(path)
        if manifest.get("kind") != "alignment":
            raise StateError(f"{path} is not an alignment checkpoint")
        config = AlignmentConfig(**manifest["config"])
        gnn_configs = [GnnConfig(**c) for c in manifest["gnn_configs"]]
        gnn_params = [{} for _ in gnn_configs]
        projectors = {}
        classifiers = [{} for _ in range(1 if config.shared_classifier else len(gnn_configs))]
        for name, arr in tensors.items():
            scope, rest = name.split(".", 1)
            if scope == "gnn":
                idx, pname = rest.split(".", 1)
                gnn_params[int(idx)][pname] = arr
            elif scope == "proj":
                projectors[name] = arr
            elif scope == "clf":
                idx, pname = rest.split(".", 1)
                classifiers[int(idx)][pname] = arr
        return cls(gnn_configs, gnn_params, projectors, classifiers, config,
                   manifest["feature_dim"], manifest["num_classes"],
                   manifest["seed"], manifest.get("log", []),
                   frozen=manifest.get("frozen", True))


def train_aligned(gnn_configs, graph, features, split, config):
    """Stage-1 training; returns a frozen AlignmentCheckpoint.

    Every epoch gives each encoder exactly one optimization pass over the
    train split (round-robin by index); with per-batch alternation the
    passes interleave at minibatch granularity instead.  The classifier
    stops updating at ``freeze_epoch``.
    """
    if not gnn_configs:
        raise ConfigError("need at least one gnn config")
    train_ids = np.asarray(split.train, dtype=np.int64)
    if train_ids.size == 0:
        raise TrainingError("train split is empty")
    x = features.matrix if hasattr(features, "matrix") else np.asarray(features)
    ops = GraphOps.from_graph(graph)
    labels = graph.labels[train_ids]
    num_classes = len(graph.class_names)
    k = len(gnn_configs)
    t_e = config.tokens_per_node * config.embed_width

    rng_master = np.random.default_rng(config.seed)
    gnn_params, projectors, drop_rngs = [], {}, []
    for i, gcfg in enumerate(gnn_configs):
        gnn_params.append(init_gnn_params(gcfg, x.shape[1]))
        proj_rng = np.random.default_rng(config.seed * 1000 + 7 * i + 1)
        std = np.sqrt(2.0 / (gcfg.hidden + t_e))
        projectors[f"proj.{i}.W"] = proj_rng.normal(0.0, std, size=(gcfg.hidden, t_e))
        projectors[f"proj.{i}.b"] = np.zeros(t_e)
        drop_rngs.append(np.random.default_rng(config.seed * 1000 + 7 * i + 2))

    clf_in = t_e if config.classifier_input == "reshaped" else gnn_configs[0].hidden
    if config.classifier_input == "hidden":
        hiddens = {c.hidden for c in gnn_configs}
        if len(hiddens) != 1:
            raise ConfigError("classifier_input='hidden' needs equal hidden sizes")
    n_classifiers = 1 if config.shared_classifier else k
    classifiers = [init_mlp([clf_in, config.classifier_hidden, num_classes],
                            seed=config.seed * 1000 + 500 + i)
                   for i in range(n_classifiers)]

    gnn_opts = [AdamW({**gnn_params[i], **{key: projectors[key] for key in projectors
                                           if key.startswith(f"proj.{i}.")}},
                      lr=config.gnn_lr, weight_decay=config.weight_decay)
                for i in range(k)]
    clf_opts = [AdamW(c, lr=config.classifier_lr, weight_decay=config.weight_decay)
                for c in classifiers]

    freeze_epoch = config.resolved_freeze_epoch
    log = []

    def one_pass(gnn_index, batch_ids, epoch, update_classifier):
        gcfg = gnn_configs[gnn_index]
        rep, cache = gnn_forward(gcfg, gnn_params[gnn_index], ops, x,
                                 training=True, rng=drop_rngs[gnn_index])
        h_batch = rep.matrix[batch_ids]
        if config.classifier_input == "reshaped":
            reshaped = h_batch @ projectors[f"proj.{gnn_index}.W"] + projectors[f"proj.{gnn_index}.b"]
            clf_in_batch = reshaped
        else:
            clf_in_batch = h_batch
        clf = classifiers[0] if config.shared_classifier else classifiers[gnn_index]
        logits, clf_cache = mlp_forward(clf, clf_in_batch)
        batch_labels = graph.labels[batch_ids]
        loss, grad_logits = cross_entropy(logits, batch_labels)
        if not np.isfinite(loss):
            raise TrainingError(
                f"loss diverged for gnn {gcfg.kind} (index {gnn_index}) at epoch {epoch}")
        clf_grads = mlp_backward(clf, clf_cache, grad_logits)
        grad_clf_in = clf_grads.pop("input")
        gnn_grad_updates = {}
        if config.classifier_input == "reshaped":
            gnn_grad_updates[f"proj.{gnn_index}.W"] = h_batch.T @ grad_clf_in
            gnn_grad_updates[f"proj.{gnn_index}.b"] = grad_clf_in.sum(axis=0)
            grad_h_batch = grad_clf_in @ projectors[f"proj.{gnn_index}.W"].T
        else:
            grad_h_batch = grad_clf_in
        grad_h = np.zeros_like(rep.matrix)
        grad_h[batch_ids] = grad_h_batch
        gnn_grad_updates.update(gnn_backward(gcfg, gnn_params[gnn_index], cache, grad_h))
        gnn_opts[gnn_index].step(gnn_grad_updates)
        if update_classifier:
            clf_index = 0 if config.shared_classifier else gnn_index
            clf_opts[clf_index].step(clf_grads)
        return float(loss)

    for epoch in range(config.epochs):
        update_classifier = epoch < freeze_epoch
        if config.alternation == "per-epoch":
            for gnn_index in range(k):
                loss = one_pass(gnn_index, train_ids, epoch, update_classifier)
                log.append({"epoch": epoch, "gnn_index": gnn_index, "loss": loss,
                            "classifier_frozen": not update_classifier})
        else:
            order = rng_master.permutation(train_ids.size)
            batches = [train_ids[order[s:s + config.batch_size]]
                       for s in range(0, train_ids.size, config.batch_size)]
            losses = [[] for _ in range(k)]
            for b, batch in enumerate(batches):
                gnn_index = b % k
                losses[gnn_index].append(one_pass(gnn_index, batch, epoch, update_classifier))
            for gnn_index in range(k):
                if losses[gnn_index]:
                    log.append({"epoch": epoch, "gnn_index": gnn_index,
                                "loss": float(np.mean(losses[gnn_index])),
                                "classifier_frozen": not update_classifier})

    return AlignmentCheckpoint(
        gnn_configs=gnn_configs,
        gnn_params=gnn_params,
        projectors=projectors,
        classifiers=classifiers,
        config=config,
        feature_dim=x.shape[1],
        num_classes=num_classes,
        seed=config.seed,
        log=log,
    )


def extract_graph_tokens(checkpoint, graph, features, target_id=None, mode="node"):
    """Graph-token blocks (one per encoder) for a node or the whole graph."""
    if not checkpoint.frozen:
        raise StateError("checkpoint must be frozen before token extraction")
    if mode not in ("node", "graph"):
        raise ConfigError(f"unknown extraction mode {mode!r}")
    if mode == "node":
        if target_id is None or not (0 <= target_id < graph.num_nodes):
            raise KeyError(f"unknown node id {target_id}")
    blocks = []
    t = checkpoint.config.tokens_per_node
    e = checkpoint.config.embed_width
    for gnn_index in range(checkpoint.num_gnns):
        rep = checkpoint.representations(graph, features, gnn_index)
        h = rep.matrix[target_id] if mode == "node" else readout(rep)
        vec = reshape_tokens(h, checkpoint.projectors, gnn_index)
        blocks.append(GraphTokenBlock(gnn_index=gnn_index, vectors=segment_tokens(vec, t, e)))
    return blocks


def probe_transfer_accuracy(checkpoint, graph, features, split,
                            train_gnn, eval_gnn, seed=0, epochs=200, lr=0.05):
    """Train a linear probe on one encoder's reshaped outputs, test on another's.

    Measures how interchangeable the encoders' token spaces are; the shared
    classifier during stage 1 should raise this relative to private
    classifiers.
    """
    train_ids = np.asarray(split.train, dtype=np.int64)
    test_ids = np.asarray(split.test, dtype=np.int64)
    feats_a = checkpoint.reshaped(graph, features, train_gnn)
    feats_b = checkpoint.reshaped(graph, features, eval_gnn)
    # standardize with train-side statistics so the probe sees comparable scales
    mu = feats_a[train_ids].mean(axis=0)
    sd = feats_a[train_ids].std(axis=0) + 1e-8
    probe = init_mlp([feats_a.shape[1], checkpoint.num_classes], seed=seed, scale=0.01)
    opt = AdamW(probe, lr=lr, weight_decay=1e-4)
    xa = (feats_a[train_ids] - mu) / sd
    ya = graph.labels[train_ids]
    for _ in range(epochs):
        logits, cache = mlp_forward(probe, xa)
        _, grad = cross_entropy(logits, ya)
        grads = mlp_backward(probe, cache, grad)
        grads.pop("input")
        opt.step(grads)
    xb = (feats_b[test_ids] - mu) / sd
    logits, _ = mlp_forward(probe, xb)
    pred = logits.argmax(axis=1)
    return float((pred == graph.labels[test_ids]).mean())
