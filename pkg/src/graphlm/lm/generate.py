"""Greedy decoding and label parsing."""

import re

import numpy as np

from .model import embed_with_injection, lm_forward


def generate(params, adapters, config, vocab, prompt_ids, blocks=(),
             positions=None, max_new=8):
    """Greedy continuation of an injected prompt; stops at <end> or max_new.

    Recomputes the full forward pass per new token (no KV cache); the
    injected graph-token rows stay fixed while generated ids append as
    ordinary lookups.
    """
    ids = list(prompt_ids)
    generated = []
    # reserved ids are never valid continuations: dummies only enter by
    # injection and pad/unk would poison the decoded label
    blocked = sorted(vocab.dummy_ids | {vocab.pad_id, vocab.unk_id})
    for _ in range(max_new):
        embedded = embed_with_injection(params, vocab, ids, blocks, positions)
        logits, _ = lm_forward(params, adapters, embedded, config)
        row = logits[-1].copy()
        row[blocked] = -np.inf
        next_id = int(row.argmax())
        if next_id == vocab.end_id:
            break
        generated.append(next_id)
        ids.append(next_id)
    return vocab.decode(generated, skip_special=False)


def _normalize(text):
    return re.sub(r"[\s_]+", " ", text).strip().lower()


def substring_matches(generated, class_names):
    """Class names whose normalized form appears inside the generated text."""
    hay = _normalize(generated)
    return [name for name in class_names if _normalize(name) and _normalize(name) in hay]


def parse_label(generated, class_names):
    """Map generated text to a class index.

    Exact (normalized) match wins; otherwise a unique case-insensitive
    substring match; ambiguous or absent matches are a parse failure
    (None), which metrics count as incorrect.
    """
    if not class_names:
        raise ValueError("class_names must be nonempty")
    norm = _normalize(generated)
    for i, name in enumerate(class_names):
        if norm == _normalize(name):
            return i
    matches = substring_matches(generated, class_names)
    if len(matches) == 1:
        return class_names.index(matches[0])
    return None
