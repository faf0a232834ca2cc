"""Metrics, pipeline orchestration, ablation grid, t-sweep and speed probe."""

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .alignment import AlignmentConfig, AlignmentCheckpoint, train_aligned
from .baselines import (BaseLearnerOutput, adaboost_fit_predict, bagging_fit_predict,
                        mlp_baseline, stacking_fit_predict)
from .checkpointing import config_digest, tensor_digest
from .config import PipelineConfig, merge
from .errors import ConfigError, DataError
from .gnn import GnnConfig
from .graph import load_tag, make_shot_split, make_split, sample_neighbors
from .lm import (LmConfig, attach_lora, build_vocab, generate, init_lm_params,
                 parse_label)
from .prompting import build_prompt, default_instruction, make_default_template
from .sft import SftConfig, build_sft_dataset, evaluate_samples, finetune
from .synth import SyntheticTagConfig, make_synthetic_tag
from .textenc import TextEncoderConfig, encode_nodes


def accuracy(predictions, labels):
    """Fraction correct; parse failures (None) count as incorrect."""
    if len(predictions) == 0:
        raise DataError("cannot compute accuracy of an empty prediction list")
    if len(predictions) != len(labels):
        raise DataError("predictions and labels differ in length")
    correct = sum(1 for p, y in zip(predictions, labels) if p is not None and p == y)
    return correct / len(predictions)


def auc(scores, labels):
    """Pairwise ranking AUC for binary labels; ties count one half.

    Exact integer counting of (positive, negative) pairs, so it equals a
    brute-force pairwise oracle bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUC needs both classes present")
    left = np.searchsorted(neg, pos, side="left")
    right = np.searchsorted(neg, pos, side="right")
    wins = int(left.sum())
    ties = int((right - left).sum())
    return (wins + 0.5 * ties) / (pos.size * neg.size)


@dataclass
class MetricsReport:
    accuracy: float
    parse_failures: int
    seed: int
    config_digest: str
    wall_clock_sec: float
    samples_per_sec: float
    num_test: int
    auc: float = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def run_directory():
    """All artifacts land under the directory named by GRAPHLM_RUN_DIR."""
    return os.environ.get("GRAPHLM_RUN_DIR", "runs")


def prepare_data(config):
    """Load or synthesize the graph, encode features, draw the split."""
    if config.dataset == "synthetic":
        graph = make_synthetic_tag(SyntheticTagConfig(
            nodes_per_class=config.synth_nodes_per_class, seed=config.seed))
    else:
        graph = load_tag(config.dataset)
    features = encode_nodes(graph, TextEncoderConfig(
        provider=config.feature_provider, d=config.feature_dim))
    if config.shots > 0:
        split = make_shot_split(graph, config.shots, seed=config.seed)
    else:
        split = make_split(graph, tuple(config.split_fractions), seed=config.seed)
    return graph, features, split


def gnn_configs_for(config):
    return [
        GnnConfig(kind=kind, layers=config.gnn_layers, hidden=config.gnn_hidden,
                  heads=config.gat_heads, dropout=config.gnn_dropout,
                  seed=config.seed * 97 + i)
        for i, kind in enumerate(config.gnns)
    ]


def alignment_config_for(config):
    return AlignmentConfig(
        tokens_per_node=config.tokens_per_node,
        embed_width=config.embed_width,
        epochs=config.align_epochs,
        freeze_epoch=config.align_freeze_epoch,
        gnn_lr=config.align_gnn_lr,
        classifier_lr=config.align_classifier_lr,
        weight_decay=config.align_weight_decay,
        alternation=config.align_alternation,
        classifier_hidden=config.classifier_hidden,
        shared_classifier=config.aligned,
        seed=config.seed,
    )


def stage1_key(config):
    """Digest over everything stage 1 depends on (for ablation cache reuse)."""
    payload = {
        "dataset": config.dataset,
        "seed": config.seed,
        "split_fractions": list(config.split_fractions),
        "shots": config.shots,
        "synth_nodes_per_class": config.synth_nodes_per_class,
        "feature_dim": config.feature_dim,
        "feature_provider": config.feature_provider,
        "gnns": list(config.gnns),
        "gnn_hidden": config.gnn_hidden,
        "gnn_layers": config.gnn_layers,
        "gnn_dropout": config.gnn_dropout,
        "gat_heads": config.gat_heads,
        "tokens_per_node": config.tokens_per_node,
        "embed_width": config.embed_width,
        "align": asdict(alignment_config_for(config)),
    }
    return config_digest(payload)


def train_stage1(config, graph, features, split, cache=None):
    """Stage-1 training with optional cross-run checkpoint reuse."""
    if not config.gnns:
        return None
    key = stage1_key(config)
    if cache is not None and key in cache:
        return cache[key]
    checkpoint = train_aligned(gnn_configs_for(config), graph, features, split,
                               alignment_config_for(config))
    if cache is not None:
        cache[key] = checkpoint
    return checkpoint


def build_pipeline_vocab(config, graph, template):
    """Vocabulary over node texts, class names and the template scaffold."""
    corpus = [node.text for node in graph.nodes]
    corpus.extend(graph.class_names)
    probe = build_prompt(template, graph, 0, [], config.num_gnns,
                         config.tokens_per_node, graph.class_names,
                         instruction=default_instruction(template.task))
    corpus.append(probe.text)
    return build_vocab(corpus, k_max=max(1, config.num_gnns),
                       t_max=max(1, config.tokens_per_node))


def sft_config_for(config):
    return SftConfig(
        learning_rate=config.sft_learning_rate,
        lora_rank=config.lora_rank,
        lora_alpha=config.lora_alpha,
        lora_dropout=config.lora_dropout,
        loraplus_ratio=config.loraplus_ratio,
        batch_size=config.sft_batch_size,
        max_epochs=config.sft_max_epochs,
        patience=config.sft_patience,
        warmup_ratio=config.sft_warmup_ratio,
        max_tokens=config.token_budget,
        neighbor_cap=config.neighbor_cap if config.with_neighbor else 0,
        max_new=config.max_new,
        with_text=config.with_text,
        with_neighbors=config.with_neighbor,
        seed=config.seed,
    )


def lora_target_names(config):
    names = []
    for suffix in config.lora_targets:
        if suffix.startswith("head"):
            names.append("head.W")
        else:
            names.extend(f"layers.{l}.{suffix}" for l in range(config.lm_layers))
    return names


@dataclass
class PipelineRunResult:
    report: MetricsReport
    checkpoint: object
    adapters: dict
    lm_params: dict
    lm_config: LmConfig
    vocab: object
    sft_result: object
    graph: object
    features: object
    split: object
    template: object
    align_digest: str
    adapter_digest: str


def run_pipeline(config, stage1_cache=None):
    """Stage 1 -> token extraction -> stage 2 -> evaluation; returns the run."""
    started = time.perf_counter()
    graph, features, split = prepare_data(config)
    checkpoint = train_stage1(config, graph, features, split, cache=stage1_cache)
    labels = [kind.upper() for kind in config.gnns]
    template = make_default_template(labels, task="node")
    vocab = build_pipeline_vocab(config, graph, template)
    lm_config = LmConfig(
        vocab_size=len(vocab), embed_width=config.embed_width,
        layers=config.lm_layers, heads=config.lm_heads,
        ffn_mult=config.lm_ffn_mult, max_len=config.token_budget + 64,
        seed=config.seed,
    )
    lm_params = init_lm_params(lm_config, dummy_ids=sorted(vocab.dummy_ids))
    adapters = attach_lora(lm_params, lora_target_names(config),
                           r=config.lora_rank, alpha=config.lora_alpha,
                           dropout=config.lora_dropout, seed=config.seed)
    sft_config = sft_config_for(config)
    sft_result = finetune(lm_params, adapters, lm_config, checkpoint, graph,
                          features, template, vocab, split, sft_config)

    test_samples = build_sft_dataset(
        graph, split.test, checkpoint, template, vocab, features,
        config.num_gnns, config.tokens_per_node, seed=config.seed,
        max_tokens=config.token_budget,
        neighbor_cap=config.neighbor_cap if config.with_neighbor else 0,
        with_text=config.with_text, with_neighbors=config.with_neighbor)
    eval_started = time.perf_counter()
    test_acc, failures = evaluate_samples(
        lm_params, adapters, lm_config, vocab, test_samples, graph.class_names,
        max_new=config.max_new)
    eval_elapsed = time.perf_counter() - eval_started

    report = MetricsReport(
        accuracy=test_acc,
        parse_failures=failures,
        seed=config.seed,
        config_digest=config.digest(),
        wall_clock_sec=time.perf_counter() - started,
        samples_per_sec=len(test_samples) / eval_elapsed if eval_elapsed > 0 else 0.0,
        num_test=len(test_samples),
        extra={
            "best_val_accuracy": sft_result.best_val_accuracy,
            "sft_steps": sft_result.steps_run,
            "tokens_per_node": config.tokens_per_node,
            "gnns": list(config.gnns),
        },
    )
    return PipelineRunResult(
        report=report,
        checkpoint=checkpoint,
        adapters=adapters,
        lm_params=lm_params,
        lm_config=lm_config,
        vocab=vocab,
        sft_result=sft_result,
        graph=graph,
        features=features,
        split=split,
        template=template,
        align_digest=tensor_digest(checkpoint._tensors()) if checkpoint else "",
        adapter_digest=tensor_digest(
            {f"lora.{t}.A": a.A for t, a in adapters.items()}
            | {f"lora.{t}.B": a.B for t, a in adapters.items()}),
    )


@dataclass
class AblationCell:
    gnn_subset: tuple
    alignment: bool
    with_text: bool
    with_neighbor: bool
    report: MetricsReport


def default_ablation_grid(config):
    """Grid mirroring the standard eight-row component study."""
    all_gnns = tuple(config.gnns)
    return [
        {"gnns": (), "aligned": True, "with_text": True, "with_neighbor": True},
        *({"gnns": (kind,), "aligned": True, "with_text": True, "with_neighbor": True}
          for kind in all_gnns),
        {"gnns": all_gnns, "aligned": True, "with_text": False, "with_neighbor": True},
        {"gnns": all_gnns, "aligned": False, "with_text": True, "with_neighbor": True},
        {"gnns": all_gnns, "aligned": True, "with_text": True, "with_neighbor": False},
        {"gnns": all_gnns, "aligned": True, "with_text": True, "with_neighbor": True},
    ]


def run_ablation(base_config, grid=None):
    """One pipeline run per grid cell, sharing seeds and stage-1 checkpoints."""
    cells = grid if grid is not None else default_ablation_grid(base_config)
    if not cells:
        raise ConfigError("ablation grid is empty")
    stage1_cache = {}
    results = []
    for overrides in cells:
        cell_config = merge(base_config, overrides)
        run = run_pipeline(cell_config, stage1_cache=stage1_cache)
        results.append(AblationCell(
            gnn_subset=tuple(cell_config.gnns),
            alignment=cell_config.aligned,
            with_text=cell_config.with_text,
            with_neighbor=cell_config.with_neighbor,
            report=run.report,
        ))
    return results


def sweep_graph_tokens(values, base_config, table_path=None):
    """Full pipeline per t value with shared seeds; emits a plot-ready table."""
    if not values:
        raise ConfigError("sweep needs at least one t value")
    reports = []
    for t in values:
        run = run_pipeline(merge(base_config, {"tokens_per_node": int(t)}))
        reports.append((int(t), run.report))
    if table_path:
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write("t\taccuracy\tparse_failures\tsamples_per_sec\n")
            for t, report in reports:
                fh.write(f"{t}\t{report.accuracy:.6f}\t{report.parse_failures}"
                         f"\t{report.samples_per_sec:.3f}\n")
    return reports


def speed_probe(lm_params, adapters, lm_config, vocab, samples, class_names,
                min_inferences=100, max_new=4):
    """Wall-clock throughput over at least ``min_inferences`` generations."""
    if not samples:
        raise DataError("speed probe needs a nonempty eval set")
    todo = []
    while len(todo) < min_inferences:
        todo.extend(samples)
    todo = todo[:max(min_inferences, len(samples))]
    started = time.perf_counter()
    for sample in todo:
        text = generate(lm_params, adapters, lm_config, vocab, sample.input_ids,
                        sample.blocks, sample.spec.dummy_positions, max_new=max_new)
        parse_label(text, list(class_names))
    elapsed = time.perf_counter() - started
    return len(todo) / elapsed


def single_gnn_reports(config, graph, features, split, checkpoint):
    """Accuracy of each frozen encoder + classifier on the test split."""
    test_ids = np.asarray(split.test, dtype=np.int64)
    out = {}
    for i, kind in enumerate(config.gnns):
        probs = checkpoint.node_probabilities(graph, features, i)
        preds = probs[test_ids].argmax(axis=1)
        out[kind] = accuracy(list(preds), list(graph.labels[test_ids]))
    return out


def classical_ensemble_reports(config, graph, features, split, checkpoint,
                               n_bags=6, adaboost_rounds=12):
    """Bagging / stacking / AdaBoost over the frozen encoders' probabilities."""
    test_ids = np.asarray(split.test, dtype=np.int64)
    labels = graph.labels
    gnn_probs = [checkpoint.node_probabilities(graph, features, i)
                 for i in range(checkpoint.num_gnns)]

    def factory_for(index):
        def factory(train_ids, seed):
            sub = merge(config, {"gnns": (config.gnns[index],), "seed": seed})
            boot_split = type(split)(train=tuple(int(i) for i in train_ids),
                                     validation=(), test=())
            ckpt = train_aligned(gnn_configs_for(sub), graph, features, boot_split,
                                 alignment_config_for(sub))
            return ckpt.node_probabilities(graph, features, 0)
        return factory

    results = {}
    bag_out = bagging_fit_predict([factory_for(i) for i in range(len(config.gnns))],
                                  split, n_bags=n_bags, seed=config.seed)
    results["bagging"] = accuracy(list(bag_out.probs[test_ids].argmax(axis=1)),
                                  list(labels[test_ids]))
    stack_out = stacking_fit_predict(gnn_probs, labels, split)
    results["stacking"] = accuracy(list(stack_out.probs[test_ids].argmax(axis=1)),
                                   list(labels[test_ids]))
    stacked_features = np.concatenate(gnn_probs, axis=1)
    boost_out = adaboost_fit_predict(stacked_features, labels, split,
                                     rounds=adaboost_rounds, seed=config.seed,
                                     num_classes=len(graph.class_names))
    results["adaboost"] = accuracy(list(boost_out.probs[test_ids].argmax(axis=1)),
                                   list(labels[test_ids]))
    mlp_out = mlp_baseline(features, labels, split)
    results["mlp"] = accuracy(list(mlp_out.probs[test_ids].argmax(axis=1)),
                              list(labels[test_ids]))
    return results
