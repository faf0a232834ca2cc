"""Pipeline configuration: defaults, flat key-value files, digests.

Config files are flat ``key = value`` lines (# comments allowed); values
are parsed as JSON scalars where possible, and comma-separated lists
become tuples.  Precedence is flags > config file > defaults, applied by
the CLI through ``merge``.
"""

import json
from dataclasses import asdict, dataclass, fields

from .checkpointing import config_digest
from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    # data
    dataset: str = "synthetic"
    seed: int = 0
    split_fractions: tuple = (0.6, 0.2, 0.2)
    shots: int = 0
    synth_nodes_per_class: int = 75
    # text features
    feature_dim: int = 128
    feature_provider: str = "hash-fallback"
    # encoders
    gnns: tuple = ("gcn", "gat", "gin")
    gnn_hidden: int = 32
    gnn_layers: int = 2
    gnn_dropout: float = 0.2
    gat_heads: int = 4
    # stage 1 alignment
    tokens_per_node: int = 8
    embed_width: int = 64
    align_epochs: int = 200
    align_freeze_epoch: int = -1
    align_gnn_lr: float = 5e-3
    align_classifier_lr: float = 5e-3
    align_weight_decay: float = 5e-3
    align_alternation: str = "per-epoch"
    aligned: bool = True
    classifier_hidden: int = 64
    # prompting
    with_text: bool = True
    with_neighbor: bool = True
    neighbor_cap: int = 20
    token_budget: int = 2047
    # language model
    lm_layers: int = 2
    lm_heads: int = 4
    lm_ffn_mult: int = 4
    # stage 2 fine-tuning
    sft_learning_rate: float = 2e-2
    lora_rank: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.0
    loraplus_ratio: float = 16.0
    sft_batch_size: int = 4
    sft_max_epochs: int = 12
    sft_patience: int = 3
    sft_warmup_ratio: float = 0.1
    lora_targets: tuple = ("attn.wq", "attn.wv")
    max_new: int = 8

    def digest(self):
        return config_digest(asdict(self))

    @property
    def num_gnns(self):
        return len(self.gnns)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(name, value):
    if name not in _FIELDS:
        raise ConfigError(f"unknown configuration key {name!r}")
    default = _FIELDS[name].default
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1", "yes"):
            return True
        if str(value).lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: cannot read {value!r} as a boolean")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, (list, tuple)):
            items = list(value)
        else:
            items = [v.strip() for v in str(value).split(",") if v.strip()]
        coerced = []
        for item in items:
            try:
                coerced.append(json.loads(item) if isinstance(item, str) else item)
            except json.JSONDecodeError:
                coerced.append(item)
        return tuple(coerced)
    return str(value)


def make_config(overrides=None):
    values = {}
    for name, value in (overrides or {}).items():
        values[name] = _coerce(name, value)
    return PipelineConfig(**values)


def merge(config, overrides):
    """New config with ``overrides`` applied on top."""
    values = asdict(config)
    for name, value in overrides.items():
        values[name] = _coerce(name, value)
    return PipelineConfig(**values)


def load_config_file(path):
    """Flat key = value file -> dict of raw values."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_number}: expected 'key = value'")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    return raw


def load_config(path=None, overrides=None):
    values = load_config_file(path) if path else {}
    values.update(overrides or {})
    return make_config(values)
