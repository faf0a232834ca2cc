"""Seeded synthetic text-attributed graphs for experiments and acceptance runs.

The node-classification graph has four target classes over a relay
scaffold:

* two *structure* classes whose nodes carry interchangeable filler text
  but wire (through shared relay nodes with side-neutral phrases) to one
  of two marker hubs, so only 2-hop message passing can tell them apart;
* two *text* classes whose nodes carry a class-specific marker word among
  filler words but wire to relays of both sides at random, so only the
  raw text tells them apart.

Relay phrases are drawn from one small pool reused on both sides, which
keeps 1-hop neighbor text (what a prompt shows) identically distributed
across the structure classes.
"""

from dataclasses import dataclass

import numpy as np

from .graph import NodeRecord, TextAttributedGraph

STRUCTURE_MARKERS = ("garnet", "cobalt")
TEXT_MARKERS = (
    ("fern", "moss", "orchid", "lichen"),
    ("quasar", "nebula", "comet", "pulsar"),
)
CLASS_NAMES = ("circuits", "magnetism", "botany", "astronomy")

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


def _filler_vocabulary(size, rng):
    words = []
    seen = set(STRUCTURE_MARKERS) | {w for pool in TEXT_MARKERS for w in pool}
    while len(words) < size:
        syllables = rng.integers(2, 4)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


@dataclass(frozen=True)
class SyntheticTagConfig:
    nodes_per_class: int = 75
    relays_per_side: int = 40
    markers_per_side: int = 3
    target_degree: int = 3
    filler_vocab: int = 40
    relay_phrases: int = 10
    words_per_node: int = 5
    seed: int = 0


def make_synthetic_tag(config=SyntheticTagConfig()):
    """Four-class TAG; labels cover targets only, scaffold nodes are unlabeled."""
    rng = np.random.default_rng(config.seed)
    fillers = _filler_vocabulary(config.filler_vocab, rng)
    phrases = [
        " ".join(fillers[rng.integers(len(fillers))] for _ in range(3))
        for _ in range(config.relay_phrases)
    ]

    npc = config.nodes_per_class
    n_targets = 4 * npc
    n_relays = 2 * config.relays_per_side
    relay_base = n_targets
    marker_base = n_targets + n_relays

    def filler_words(count):
        return [fillers[rng.integers(len(fillers))] for _ in range(count)]

    nodes = []
    for cls in range(4):
        for _ in range(npc):
            node_id = len(nodes)
            if cls < 2:
                words = filler_words(config.words_per_node)
            else:
                marker = TEXT_MARKERS[cls - 2][rng.integers(len(TEXT_MARKERS[cls - 2]))]
                words = filler_words(config.words_per_node - 1)
                words.insert(rng.integers(len(words) + 1), marker)
            nodes.append(NodeRecord(id=node_id, text=" ".join(words), label=cls))
    for _ in range(n_relays):
        nodes.append(NodeRecord(id=len(nodes),
                                text=phrases[rng.integers(len(phrases))], label=None))
    for side in range(2):
        for _ in range(config.markers_per_side):
            nodes.append(NodeRecord(id=len(nodes), text=STRUCTURE_MARKERS[side], label=None))

    def relay_ids(side):
        start = relay_base + side * config.relays_per_side
        return np.arange(start, start + config.relays_per_side)

    def marker_ids(side):
        start = marker_base + side * config.markers_per_side
        return np.arange(start, start + config.markers_per_side)

    edges = []
    for cls in range(4):
        for i in range(npc):
            target = cls * npc + i
            if cls == 0:
                pool = relay_ids(0)
            elif cls == 1:
                pool = relay_ids(1)
            else:
                pool = np.concatenate([relay_ids(0), relay_ids(1)])
            chosen = rng.choice(pool, size=config.target_degree, replace=False)
            edges.extend((int(target), int(r)) for r in chosen)
    for side in range(2):
        for relay in relay_ids(side):
            edges.extend((int(relay), int(m)) for m in marker_ids(side))

    return TextAttributedGraph.create(nodes, edges, directed=False, class_names=CLASS_NAMES)


def make_molecule_dataset(n_graphs=40, seed=0):
    """Tiny binary graph-classification set: rings vs chains with echo text.

    Ring molecules are the positive class; the optional graph text drops a
    weak hint word so text and structure carry overlapping signal.
    """
    rng = np.random.default_rng(seed)
    class_names = ("inactive", "active")
    samples = []
    for g in range(n_graphs):
        label = int(rng.integers(2))
        size = int(rng.integers(5, 12))
        nodes = [NodeRecord(id=i, text=f"atom {i}", label=None) for i in range(size)]
        edges = [(i, i + 1) for i in range(size - 1)]
        if label == 1:
            edges.append((size - 1, 0))
        hint = "cyclic scaffold" if label == 1 else "open chain"
        samples.append({
            "nodes": nodes,
            "edges": edges,
            "label": class_names[label],
            "text": f"compound {g} with {hint}",
        })
    return class_names, samples


def write_molecule_dataset(path, n_graphs=40, seed=0):
    import json

    class_names, samples = make_molecule_dataset(n_graphs, seed)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"classes": list(class_names), "directed": False}) + "\n")
        for sample in samples:
            fh.write(json.dumps({
                "nodes": [{"id": n.id, "text": n.text, "label": None}
                          for n in sample["nodes"]],
                "edges": [{"src": a, "dst": b} for a, b in sample["edges"]],
                "label": sample["label"],
                "text": sample["text"],
            }) + "\n")
    return path
