"""MLP baseline and classical ensemblers over per-node probability rows.

The ensemblers consume class-probability vectors (not embeddings): base
learners are typically the frozen stage-1 encoders plus the shared
classifier, or an MLP over the text features.  All outputs are (N, C)
probability matrices covering every node; consumers slice the split they
care about.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingError
from .nn.functional import cross_entropy, softmax
from .nn.mlp import init_mlp, mlp_backward, mlp_forward
from .nn.optim import AdamW


@dataclass
class BaseLearnerOutput:
    """Per-node class probabilities from one learner."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 2 or (p < -1e-9).any() or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
            raise DataError("probability rows must be nonnegative and sum to 1")


@dataclass
class EnsembleModel:
    kind: str
    learners: list
    meta_weights: object = None


@dataclass(frozen=True)
class MlpBaselineConfig:
    hidden: int = 64
    epochs: int = 200
    lr: float = 1e-2
    weight_decay: float = 1e-4
    seed: int = 0


def mlp_baseline(features, labels, split, config=MlpBaselineConfig()):
    """Two-layer MLP on raw features; probabilities for every node."""
    x = features.matrix if hasattr(features, "matrix") else np.asarray(features)
    train_ids = np.asarray(split.train, dtype=np.int64)
    if train_ids.size == 0:
        raise TrainingError("train split is empty")
    num_classes = int(labels.max()) + 1
    params = init_mlp([x.shape[1], config.hidden, num_classes], seed=config.seed)
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    xt, yt = x[train_ids], labels[train_ids]
    for _ in range(config.epochs):
        logits, cache = mlp_forward(params, xt)
        loss, grad = cross_entropy(logits, yt)
        if not np.isfinite(loss):
            raise TrainingError("mlp baseline diverged")
        grads = mlp_backward(params, cache, grad)
        grads.pop("input")
        opt.step(grads)
    logits, _ = mlp_forward(params, x)
    return BaseLearnerOutput(probs=softmax(logits, axis=1))


def bagging_fit_predict(learner_factories, split, n_bags, seed, bootstrap=True):
    """Average the probability rows of learners trained on bootstrap samples.

    ``learner_factories`` is one callable or a list cycled over bags; each
    factory(train_ids, seed) returns an (N, C) probability matrix (or a
    BaseLearnerOutput) over all nodes.
    """
    if n_bags < 1:
        raise ConfigError("need at least one bag")
    if callable(learner_factories):
        learner_factories = [learner_factories]
    train_ids = np.asarray(split.train, dtype=np.int64)
    rng = np.random.default_rng(seed)
    total = None
    for bag in range(n_bags):
        if bootstrap:
            sample = train_ids[rng.integers(0, train_ids.size, size=train_ids.size)]
        else:
            sample = train_ids
        factory = learner_factories[bag % len(learner_factories)]
        out = factory(sample, seed + bag)
        probs = out.probs if isinstance(out, BaseLearnerOutput) else np.asarray(out)
        total = probs if total is None else total + probs
    return BaseLearnerOutput(probs=total / n_bags)


@dataclass(frozen=True)
class StackingConfig:
    epochs: int = 300
    lr: float = 0.1
    weight_decay: float = 1e-4
    seed: int = 0


def fit_stacking(learner_probs, labels, split, config=StackingConfig()):
    """Train the logistic meta-learner on held-out validation probabilities."""
    if len(learner_probs) < 2:
        raise ConfigError("stacking needs at least two learners")
    val_ids = np.asarray(split.validation, dtype=np.int64)
    if val_ids.size == 0:
        raise DataError("stacking needs a validation fold for the meta-learner")
    mats = [p.probs if isinstance(p, BaseLearnerOutput) else np.asarray(p)
            for p in learner_probs]
    stacked = np.concatenate(mats, axis=1)
    meta = init_mlp([stacked.shape[1], mats[0].shape[1]], seed=config.seed, scale=0.01)
    opt = AdamW(meta, lr=config.lr, weight_decay=config.weight_decay)
    xv, yv = stacked[val_ids], labels[val_ids]
    for _ in range(config.epochs):
        logits, cache = mlp_forward(meta, xv)
        _, grad = cross_entropy(logits, yv)
        grads = mlp_backward(meta, cache, grad)
        grads.pop("input")
        opt.step(grads)
    return EnsembleModel(kind="stacking", learners=mats, meta_weights=meta), stacked


def stacking_fit_predict(learner_probs, labels, split, config=StackingConfig()):
    model, stacked = fit_stacking(learner_probs, labels, split, config)
    logits, _ = mlp_forward(model.meta_weights, stacked)
    return BaseLearnerOutput(probs=softmax(logits, axis=1))


class DecisionStump:
    """Depth-1 threshold classifier: one feature, one cut, a class per side.

    Ties break deterministically toward the earliest feature, lowest cut
    position and lowest class index.
    """

    def __init__(self, feature, threshold, left_class, right_class):
        self.feature = feature
        self.threshold = threshold
        self.left_class = left_class
        self.right_class = right_class

    @classmethod
    def fit(cls, x, y, weights, num_classes):
        n, d = x.shape
        best = None  # (error, feature, cut_position) for tie-breaking
        for j in range(d):
            order = np.argsort(x[:, j], kind="stable")
            xs, ys, ws = x[order, j], y[order], weights[order]
            prefix = np.zeros((n + 1, num_classes))
            for i in range(n):
                prefix[i + 1] = prefix[i]
                prefix[i + 1, ys[i]] += ws[i]
            total = prefix[n]
            for cut in range(n + 1):
                if 0 < cut < n and xs[cut - 1] == xs[cut]:
                    continue  # no threshold separates equal values
                left = prefix[cut]
                right = total - left
                err = total.sum() - left.max() - right.max()
                if best is None or err < best[0] - 1e-15:
                    if cut == 0:
                        threshold = xs[0] - 1.0
                    elif cut == n:
                        threshold = xs[n - 1] + 1.0
                    else:
                        threshold = 0.5 * (xs[cut - 1] + xs[cut])
                    best = (err, j, cut, threshold,
                            int(left.argmax()), int(right.argmax()))
        _, j, _, threshold, left_class, right_class = best
        return cls(j, threshold, left_class, right_class)

    def predict(self, x):
        side = x[:, self.feature] <= self.threshold
        return np.where(side, self.left_class, self.right_class)


def fit_adaboost(features, labels, split, rounds, seed, num_classes=None,
                 weak_factory=None):
    """Multiclass SAMME boosting; returns the model with per-round weights.

    Weight update: alpha_m = ln((1 - err_m)/err_m) + ln(K - 1); sample
    weights are renormalized each round.  A perfect round gets a capped
    weight and stops training; a worse-than-chance round is rejected and
    training halts with the partial model.
    """
    if rounds < 1:
        raise ConfigError("need at least one boosting round")
    x = features.matrix if hasattr(features, "matrix") else np.asarray(features, dtype=np.float64)
    train_ids = np.asarray(split.train, dtype=np.int64)
    y = labels[train_ids]
    xt = x[train_ids]
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    if weak_factory is None:
        weak_factory = lambda xs, ys, ws, s: DecisionStump.fit(xs, ys, ws, k)
    weights = np.full(train_ids.size, 1.0 / train_ids.size)
    learners, alphas, errors = [], [], []
    weight_trace = [weights.copy()]
    for m in range(rounds):
        learner = weak_factory(xt, y, weights, seed + m)
        pred = learner.predict(xt)
        wrong = pred != y
        err = float(weights[wrong].sum())
        if err >= 1.0 - 1.0 / k:
            break  # worse than chance: reject the round, keep the partial model
        if err <= 0.0:
            alphas.append(math.log((1.0 - 1e-10) / 1e-10) + math.log(k - 1))
            learners.append(learner)
            errors.append(err)
            weight_trace.append(weights.copy())
            break
        alpha = math.log((1.0 - err) / err) + math.log(k - 1)
        learners.append(learner)
        alphas.append(alpha)
        errors.append(err)
        weights = weights * np.exp(alpha * wrong)
        weights = weights / weights.sum()
        weight_trace.append(weights.copy())
    model = EnsembleModel(kind="adaboost", learners=learners, meta_weights=list(alphas))
    model.errors = errors
    model.weight_trace = weight_trace
    model.num_classes = k
    return model


def adaboost_predict_proba(model, features):
    x = features.matrix if hasattr(features, "matrix") else np.asarray(features, dtype=np.float64)
    votes = np.zeros((x.shape[0], model.num_classes))
    for alpha, learner in zip(model.meta_weights, model.learners):
        pred = learner.predict(x)
        votes[np.arange(x.shape[0]), pred] += alpha
    sums = votes.sum(axis=1, keepdims=True)
    uniform = np.full_like(votes, 1.0 / model.num_classes)
    with np.errstate(invalid="ignore"):
        probs = np.where(sums > 0, votes / np.where(sums > 0, sums, 1.0), uniform)
    return probs


def adaboost_fit_predict(features, labels, split, rounds, seed, num_classes=None,
                         weak_factory=None):
    model = fit_adaboost(features, labels, split, rounds, seed,
                         num_classes=num_classes, weak_factory=weak_factory)
    return BaseLearnerOutput(probs=adaboost_predict_proba(model, features))
