"""Text-attributed graph data model, dataset IO, splits and neighbor sampling.

Dataset files are line-delimited JSON (UTF-8):

    {"classes": ["A", "B"], "directed": false}      <- header, first line
    {"id": 0, "text": "some text", "label": "A"}    <- one per node
    {"src": 0, "dst": 1}                            <- one per edge

Graph-classification datasets reuse the header followed by one record per
graph: {"nodes": [...], "edges": [...], "label": "A", "text": "..."}.

Graphs are immutable after construction; undirected edges are canonicalized
to (min, max) with duplicates and self-loops dropped at load time, so a
load -> save -> load round trip is exact.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DataError, ParseError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeRecord:
    id: int
    text: str
    label: Optional[int] = None


@dataclass(frozen=True)
class TextAttributedGraph:
    """Immutable graph with per-node text and optional class labels.

    ``nodes`` is sorted by id and ids are contiguous 0..N-1.  ``edges`` is
    canonical: for undirected graphs each pair appears once as (min, max).
    """

    nodes: tuple
    edges: tuple
    directed: bool = False
    class_names: tuple = ()

    def __post_init__(self):
        n = len(self.nodes)
        if n < 1:
            raise ValidationError("graph must contain at least one node")
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ValidationError(
                    f"node ids must be contiguous and sorted; found id {node.id} at row {i}"
                )
            if node.text is None:
                raise ValidationError(f"node {node.id} has no text field")
            if node.label is not None and not (0 <= node.label < len(self.class_names)):
                raise ValidationError(
                    f"node {node.id} label {node.label} outside [0, {len(self.class_names)})"
                )
        seen = set()
        for src, dst in self.edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise ValidationError(f"edge ({src}, {dst}) references a missing node")
            key = (src, dst) if self.directed else (min(src, dst), max(src, dst))
            if key in seen:
                raise ValidationError(f"duplicate edge ({src}, {dst})")
            seen.add(key)

    @classmethod
    def create(cls, nodes, edges, directed=False, class_names=()):
        """Build a graph from unsorted nodes and raw edges.

        Sorts nodes by id, canonicalizes undirected edges to (min, max),
        and drops duplicates and self-loops.
        """
        nodes = tuple(sorted(nodes, key=lambda r: r.id))
        canon = []
        seen = set()
        for src, dst in edges:
            if src == dst:
                continue
            key = (src, dst) if directed else (min(src, dst), max(src, dst))
            if key in seen:
                continue
            seen.add(key)
            canon.append(key)
        return cls(
            nodes=nodes,
            edges=tuple(canon),
            directed=directed,
            class_names=tuple(class_names),
        )

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_edges(self):
        return len(self.edges)

    @cached_property
    def labels(self):
        """int64 array of class indices, -1 where unlabeled."""
        out = np.full(self.num_nodes, -1, dtype=np.int64)
        for node in self.nodes:
            if node.label is not None:
                out[node.id] = node.label
        return out

    @cached_property
    def labeled_ids(self):
        return np.flatnonzero(self.labels >= 0)

    @cached_property
    def csr(self):
        """Symmetric neighbor structure (indptr, indices), self-loops excluded.

        Message passing treats edges as undirected regardless of the stored
        directedness flag, so every edge contributes both directions.
        """
        n = self.num_nodes
        src = np.empty(2 * len(self.edges), dtype=np.int64)
        dst = np.empty(2 * len(self.edges), dtype=np.int64)
        for e, (a, b) in enumerate(self.edges):
            src[2 * e], dst[2 * e] = a, b
            src[2 * e + 1], dst[2 * e + 1] = b, a
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, dst

    @cached_property
    def edge_rows(self):
        """Row (aggregating node) id of every CSR edge."""
        indptr, _ = self.csr
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(indptr))

    @cached_property
    def reverse_edge_permutation(self):
        """Permutation mapping CSR edge (i, j) to the index of (j, i)."""
        indptr, indices = self.csr
        n = self.num_nodes
        key = self.edge_rows * n + indices
        rev_key = indices * n + self.edge_rows
        return np.searchsorted(key, rev_key)

    def degree(self, node_id):
        indptr, _ = self.csr
        return int(indptr[node_id + 1] - indptr[node_id])

    def neighbors(self, node_id):
        if not (0 <= node_id < self.num_nodes):
            raise KeyError(f"unknown node id {node_id}")
        indptr, indices = self.csr
        return indices[indptr[node_id]:indptr[node_id + 1]]


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    validation: tuple
    test: tuple
    shot_count: Optional[int] = None

    def __post_init__(self):
        sets = [set(self.train), set(self.validation), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValidationError("split sets must be disjoint")

    def validate_against(self, graph):
        ids = set(self.train) | set(self.validation) | set(self.test)
        node_ids = set(range(graph.num_nodes))
        if not ids <= node_ids:
            raise ValidationError("split references ids outside the graph")
        labeled = set(int(i) for i in graph.labeled_ids)
        if not ids <= labeled:
            raise ValidationError("split contains unlabeled nodes")


def _parse_line(line, line_number):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line_number) from None
    if not isinstance(record, dict):
        raise ParseError("record is not an object", line_number)
    return record


def load_tag(path):
    """Load a node-classification TAG from a line-delimited record file."""
    nodes, edges = [], []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = _parse_line(line, line_number)
            if "classes" in record:
                header = record
            elif "id" in record:
                nodes.append(_node_from_record(record, header, line_number))
            elif "src" in record:
                try:
                    edges.append((int(record["src"]), int(record["dst"])))
                except (KeyError, TypeError, ValueError):
                    raise ParseError("edge record needs integer src and dst", line_number) from None
            else:
                raise ParseError("record is neither header, node nor edge", line_number)
    if header is None:
        raise ParseError("missing header line with class list", 1)
    return TextAttributedGraph.create(
        nodes,
        edges,
        directed=bool(header.get("directed", False)),
        class_names=header["classes"],
    )


def _node_from_record(record, header, line_number):
    if header is None:
        raise ParseError("node record appears before the header line", line_number)
    try:
        node_id = int(record["id"])
        text = record["text"]
    except (KeyError, TypeError, ValueError):
        raise ParseError("node record needs integer id and text", line_number) from None
    if not isinstance(text, str):
        raise ParseError("node text must be a string", line_number)
    label_name = record.get("label")
    if label_name is None:
        label = None
    else:
        try:
            label = header["classes"].index(label_name)
        except ValueError:
            raise ParseError(f"unknown class label {label_name!r}", line_number) from None
    return NodeRecord(id=node_id, text=text, label=label)


def save_tag(graph, path):
    """Serialize a graph back to the line-delimited record format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"classes": list(graph.class_names), "directed": graph.directed}) + "\n")
        for node in graph.nodes:
            label = None if node.label is None else graph.class_names[node.label]
            fh.write(json.dumps({"id": node.id, "text": node.text, "label": label}) + "\n")
        for src, dst in graph.edges:
            fh.write(json.dumps({"src": int(src), "dst": int(dst)}) + "\n")


@dataclass(frozen=True)
class GraphSample:
    """One graph of a graph-classification dataset."""

    graph: TextAttributedGraph
    label: int
    text: str = ""


def load_graph_dataset(path):
    """Load a graph-classification dataset: header line, then one graph per line."""
    header = None
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = _parse_line(line, line_number)
            if header is None:
                if "classes" not in record:
                    raise ParseError("first line must be the header with class list", line_number)
                header = record
                continue
            if "nodes" not in record or "edges" not in record:
                raise ParseError("graph record needs node and edge arrays", line_number)
            nodes = [_node_from_record(r, header, line_number) for r in record["nodes"]]
            edges = [(int(e["src"]), int(e["dst"])) for e in record["edges"]]
            graph = TextAttributedGraph.create(
                nodes, edges,
                directed=bool(header.get("directed", False)),
                class_names=header["classes"],
            )
            label_name = record.get("label")
            if label_name not in header["classes"]:
                raise ParseError(f"unknown graph label {label_name!r}", line_number)
            samples.append(GraphSample(
                graph=graph,
                label=header["classes"].index(label_name),
                text=record.get("text", "") or "",
            ))
    if header is None:
        raise ParseError("missing header line with class list", 1)
    return samples


def normalized_adjacency(graph):
    """Dense symmetric normalization D^{-1/2} (A + I) D^{-1/2}."""
    n = graph.num_nodes
    a = np.zeros((n, n), dtype=np.float64)
    for src, dst in graph.edges:
        a[src, dst] = 1.0
        if not graph.directed:
            a[dst, src] = 1.0
    a += np.eye(n)
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def normalized_adjacency_coefficients(graph):
    """CSR form of the same normalization: (self_coef, edge_coef).

    self_coef[i] multiplies node i's own features; edge_coef aligns with
    graph.csr edges.  Equals the dense operator entrywise.
    """
    indptr, indices = graph.csr
    deg = np.diff(indptr).astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    self_coef = 1.0 / deg
    edge_coef = inv_sqrt[graph.edge_rows] * inv_sqrt[indices]
    return self_coef, edge_coef


def sample_neighbors(graph, node_id, cap=20, seed=0):
    """Up to ``cap`` distinct neighbors of a node, sampled without replacement.

    The target node never appears in its own sample (self-loops are dropped
    at load time).  Deterministic for a fixed seed.
    """
    if cap < 0:
        raise ValueError("cap must be nonnegative")
    nbrs = graph.neighbors(node_id)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(nbrs))
    return [int(nbrs[i]) for i in order[:cap]]


def make_split(graph, fractions, seed):
    """Random split of the labeled nodes into train/validation/test.

    Train and validation receive floor(f * N_labeled) nodes; everything
    left over goes to test.
    """
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) < 0 or f_train + f_val + f_test > 1 + 1e-9:
        raise ValueError("fractions must be nonnegative and sum to at most 1")
    labeled = graph.labeled_ids
    if labeled.size == 0:
        raise DataError("cannot split a graph with no labeled nodes")
    rng = np.random.default_rng(seed)
    order = labeled[rng.permutation(labeled.size)]
    n_train = int(np.floor(f_train * labeled.size))
    n_val = int(np.floor(f_val * labeled.size))
    return SplitAssignment(
        train=tuple(int(i) for i in order[:n_train]),
        validation=tuple(int(i) for i in order[n_train:n_train + n_val]),
        test=tuple(int(i) for i in order[n_train + n_val:]),
    )


def make_shot_split(graph, shots, seed, val_fraction=0.5):
    """N-shot split: min(shots, available) train nodes per class.

    The remaining labeled nodes are split into validation and test;
    ``val_fraction`` is the share of that remainder used for validation.
    Classes with no labeled nodes are skipped with a logged warning.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    labels = graph.labels
    rng = np.random.default_rng(seed)
    train, rest = [], []
    for cls in range(len(graph.class_names)):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            logger.warning("class %r has no labeled nodes; skipped", graph.class_names[cls])
            continue
        order = members[rng.permutation(members.size)]
        take = min(shots, members.size)
        train.extend(int(i) for i in order[:take])
        rest.extend(int(i) for i in order[take:])
    if not train:
        raise DataError("cannot split a graph with no labeled nodes")
    rest_order = rng.permutation(len(rest))
    n_val = int(np.floor(val_fraction * len(rest)))
    validation = [rest[i] for i in rest_order[:n_val]]
    test = [rest[i] for i in rest_order[n_val:]]
    return SplitAssignment(
        train=tuple(train),
        validation=tuple(validation),
        test=tuple(test),
        shot_count=shots,
    )
