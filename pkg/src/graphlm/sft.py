"""Stage 2: LoRA supervised fine-tuning of the LM on injected prompts.

Each training sample is one labeled node: a budget-enforced prompt, the
node's graph-token blocks from the frozen stage-1 checkpoint, and the
label completion.  Only adapter tensors receive updates; the base LM and
everything in the alignment checkpoint stay bit-identical (verified by
digest).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpointing import tensor_digest
from .errors import ConfigError, TrainingError
from .graph import sample_neighbors
from .graphtokens import GraphTokenBlock, segment_tokens
from .lm.generate import generate, parse_label
from .lm.lora import adapter_param_dict, loraplus_lr_scale
from .lm.model import embed_with_injection, lm_backward, lm_forward
from .nn.functional import log_softmax, softmax
from .nn.optim import AdamW
from .prompting import build_prompt, enforce_budget, render_training_pair


@dataclass(frozen=True)
class SftConfig:
    learning_rate: float = 1e-2
    lora_rank: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.0
    loraplus_ratio: float = 16.0
    batch_size: int = 4
    max_epochs: int = 20
    patience: int = 3
    warmup_ratio: float = 0.1
    max_tokens: int = 2047
    neighbor_cap: int = 20
    max_new: int = 8
    with_text: bool = True
    with_neighbors: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup ratio must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch size and epochs must be positive")


def lr_schedule(step, total_steps, warmup_ratio, base_lr):
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(warmup_ratio * total_steps)
    if step < warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return 0.0
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class SftSample:
    node_id: int
    spec: object
    blocks: list
    input_ids: np.ndarray
    target_ids: np.ndarray
    mask: np.ndarray

    @property
    def full_ids(self):
        return np.concatenate([self.input_ids, self.target_ids])


@dataclass
class TrainingLog:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def log_step(self, step, epoch, loss, lr):
        self.steps.append({"step": step, "epoch": epoch, "loss": float(loss), "lr": float(lr)})

    def log_epoch(self, epoch, val_accuracy):
        self.epochs.append({"epoch": epoch, "val_accuracy": float(val_accuracy)})

    def save(self, path):
        import json
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.steps:
                fh.write(json.dumps({"kind": "step", **record}) + "\n")
            for record in self.epochs:
                fh.write(json.dumps({"kind": "epoch", **record}) + "\n")


def _node_seed(seed, node_id):
    return int(np.random.SeedSequence([seed, int(node_id)]).generate_state(1)[0])


def build_sft_dataset(graph, node_ids, checkpoint, template, vocab, features,
                      k, t, seed, max_tokens=2047, neighbor_cap=20,
                      with_text=True, with_neighbors=True):
    """One training sample per labeled node; deterministic for a fixed seed.

    With ``checkpoint=None`` (text-only variant, k=0) no graph tokens are
    attached.  Otherwise the per-encoder reshaped matrices are computed
    once and sliced per node, which equals per-node extract_graph_tokens
    output exactly.
    """
    if checkpoint is None:
        reshaped, num_gnns, e = [], 0, 0
    else:
        num_gnns = checkpoint.num_gnns
        reshaped = [checkpoint.reshaped(graph, features, i) for i in range(num_gnns)]
        e = checkpoint.config.embed_width
    samples = []
    for node_id in node_ids:
        label_index = graph.labels[node_id]
        if label_index < 0:
            raise TrainingError(f"node {node_id} is unlabeled")
        if with_neighbors and neighbor_cap > 0:
            neighbors = sample_neighbors(graph, node_id, cap=neighbor_cap,
                                         seed=_node_seed(seed, node_id))
        else:
            neighbors = []
        spec = build_prompt(
            template, graph, node_id, neighbors, k, t, graph.class_names,
            seed=_node_seed(seed, node_id) + 1,
            node_text_override=None if with_text else "",
            target_label=graph.class_names[label_index],
        )
        spec = enforce_budget(spec, max_tokens=max_tokens)
        blocks = [
            GraphTokenBlock(gnn_index=i, vectors=segment_tokens(reshaped[i][node_id], t, e))
            for i in range(num_gnns)
        ]
        input_ids, target_ids, mask = render_training_pair(
            spec, graph.class_names[label_index], vocab)
        samples.append(SftSample(node_id=int(node_id), spec=spec, blocks=blocks,
                                 input_ids=input_ids, target_ids=target_ids, mask=mask))
    return samples


def masked_lm_loss(logits, full_ids, mask):
    """Next-token cross-entropy restricted to masked-in positions.

    ``mask[p]`` weights the loss term for predicting token p from position
    p-1; the loss is averaged over the masked count.  Returns
    (loss, grad_logits) with grad rows exactly zero wherever the predicted
    token is masked out.
    """
    targets = full_ids[1:]
    weights = mask[1:].astype(np.float64)
    count = weights.sum()
    if count == 0:
        return 0.0, np.zeros_like(logits)
    pred_logits = logits[:-1]
    logp = log_softmax(pred_logits, axis=1)
    rows = np.arange(len(targets))
    loss = -(weights * logp[rows, targets]).sum() / count
    grad_pred = softmax(pred_logits, axis=1)
    grad_pred[rows, targets] -= 1.0
    grad_pred *= weights[:, None] / count
    grad = np.zeros_like(logits)
    grad[:-1] = grad_pred
    return float(loss), grad


def _sample_forward_backward(params, adapters, lm_config, vocab, sample,
                             training=True, rng=None):
    full_ids = sample.full_ids
    embedded = embed_with_injection(params, vocab, full_ids, sample.blocks,
                                    sample.spec.dummy_positions)
    logits, cache = lm_forward(params, adapters, embedded, lm_config,
                               training=training, rng=rng)
    loss, grad_logits = masked_lm_loss(logits, full_ids, sample.mask)
    if not training:
        return loss, None
    grads = lm_backward(params, adapters, lm_config, cache, grad_logits)
    adapter_grads = {k: v for k, v in grads.items() if k.startswith("lora.")}
    return loss, adapter_grads


def evaluate_samples(params, adapters, lm_config, vocab, samples, class_names,
                     max_new=8):
    """Greedy-decode every sample and parse labels; returns (acc, failures)."""
    correct = 0
    failures = 0
    for sample in samples:
        text = generate(params, adapters, lm_config, vocab, sample.input_ids,
                        sample.blocks, sample.spec.dummy_positions, max_new=max_new)
        predicted = parse_label(text, list(class_names))
        if predicted is None:
            failures += 1
        elif class_names[predicted] == sample.spec.target_text:
            correct += 1
    return correct / max(1, len(samples)), failures


@dataclass
class SftResult:
    adapters: dict
    log: TrainingLog
    best_val_accuracy: float
    best_epoch: int
    steps_run: int
    base_digest_before: str
    base_digest_after: str


def finetune(params, adapters, lm_config, checkpoint, graph, features, template,
             vocab, split, config):
    """LoRA fine-tuning over the train split with early stopping on val accuracy."""
    if checkpoint is not None and not checkpoint.frozen:
        raise TrainingError("alignment checkpoint must be frozen")
    if not split.train:
        raise TrainingError("train split is empty")
    k = checkpoint.num_gnns if checkpoint is not None else 0
    t = checkpoint.config.tokens_per_node if checkpoint is not None else 1
    train_samples = build_sft_dataset(
        graph, split.train, checkpoint, template, vocab, features, k, t,
        seed=config.seed, max_tokens=config.max_tokens, neighbor_cap=config.neighbor_cap,
        with_text=config.with_text, with_neighbors=config.with_neighbors)
    val_samples = build_sft_dataset(
        graph, split.validation, checkpoint, template, vocab, features, k, t,
        seed=config.seed, max_tokens=config.max_tokens, neighbor_cap=config.neighbor_cap,
        with_text=config.with_text, with_neighbors=config.with_neighbors)

    base_digest_before = tensor_digest(params)
    adapter_params = adapter_param_dict(adapters)
    optimizer = AdamW(adapter_params, lr=config.learning_rate,
                      lr_scale=loraplus_lr_scale(adapters, config.loraplus_ratio))
    steps_per_epoch = math.ceil(len(train_samples) / config.batch_size)
    total_steps = config.max_epochs * steps_per_epoch
    order_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng(config.seed + 1)

    log = TrainingLog()
    best_acc, best_epoch = -1.0, -1
    best_state = {k_: v.copy() for k_, v in adapter_params.items()}
    global_step = 0

    for epoch in range(config.max_epochs):
        order = order_rng.permutation(len(train_samples))
        for start in range(0, len(train_samples), config.batch_size):
            batch = [train_samples[i] for i in order[start:start + config.batch_size]]
            agg_grads = {}
            batch_loss = 0.0
            for sample in batch:
                loss, grads = _sample_forward_backward(
                    params, adapters, lm_config, vocab, sample,
                    training=True, rng=dropout_rng)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became non-finite at step {global_step}")
                batch_loss += loss
                for name, g in grads.items():
                    agg_grads[name] = agg_grads.get(name, 0) + g
            scale = 1.0 / len(batch)
            agg_grads = {name: g * scale for name, g in agg_grads.items()}
            lr = lr_schedule(global_step, total_steps, config.warmup_ratio,
                             config.learning_rate)
            optimizer.step(agg_grads, lr=lr)
            log.log_step(global_step, epoch, batch_loss * scale, lr)
            global_step += 1
        if val_samples:
            val_acc, _ = evaluate_samples(params, adapters, lm_config, vocab,
                                          val_samples, graph.class_names,
                                          max_new=config.max_new)
        else:
            val_acc = float("nan")
        log.log_epoch(epoch, val_acc)
        if val_samples and val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_state = {k_: v.copy() for k_, v in adapter_params.items()}
        if val_samples and epoch - best_epoch >= config.patience:
            break

    if val_samples:
        for name, value in best_state.items():
            adapter_params[name][...] = value
    else:
        best_acc, best_epoch = float("nan"), config.max_epochs - 1

    return SftResult(
        adapters=adapters,
        log=log,
        best_val_accuracy=best_acc,
        best_epoch=best_epoch,
        steps_run=global_step,
        base_digest_before=base_digest_before,
        base_digest_after=tensor_digest(params),
    )
