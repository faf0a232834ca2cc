import json

import numpy as np
import numpy.testing as npt
import pytest

from graphlm.errors import DataError, ParseError, ValidationError
from graphlm.graph import (NodeRecord, TextAttributedGraph, load_graph_dataset,
                           load_tag, make_shot_split, make_split,
                           normalized_adjacency, normalized_adjacency_coefficients,
                           sample_neighbors, save_tag)


def write_tag(path, classes, nodes, edges, directed=False):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"classes": classes, "directed": directed}) + "\n")
        for node_id, text, label in nodes:
            fh.write(json.dumps({"id": node_id, "text": text, "label": label}) + "\n")
        for src, dst in edges:
            fh.write(json.dumps({"src": src, "dst": dst}) + "\n")


def triangle_graph():
    nodes = [NodeRecord(0, "a", 0), NodeRecord(1, "b", 1), NodeRecord(2, "c", 0)]
    return TextAttributedGraph.create(nodes, [(0, 1), (1, 2)], class_names=("x", "y"))


def test_load_small_graph(tmp_path):
    path = tmp_path / "tiny.jsonl"
    write_tag(path, ["x", "y"], [(0, "a", "x"), (1, "b", "y"), (2, "c", None)],
              [(0, 1), (1, 2)])
    graph = load_tag(path)
    assert graph.num_nodes == 3
    assert graph.num_edges == 2
    assert graph.nodes[2].label is None
    assert graph.labels.tolist() == [0, 1, -1]


def test_load_cora_scale_statistics(tmp_path):
    # same node/edge/class counts as the standard citation benchmark
    rng = np.random.default_rng(0)
    classes = [f"class_{i}" for i in range(7)]
    nodes = [(i, f"paper {i}", classes[int(rng.integers(7))]) for i in range(2708)]
    edges = set()
    while len(edges) < 5429:
        a, b = rng.integers(0, 2708, size=2)
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    path = tmp_path / "cora_shape.jsonl"
    write_tag(path, classes, nodes, sorted(edges))
    graph = load_tag(path)
    assert graph.num_nodes == 2708
    assert graph.num_edges == 5429
    assert len(graph.class_names) == 7


def test_dangling_edge_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    write_tag(path, ["x"], [(0, "a", "x"), (1, "b", "x"), (2, "c", "x")], [(0, 99)])
    with pytest.raises(ValidationError):
        load_tag(path)


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "broken.jsonl"
    with open(path, "w") as fh:
        fh.write(json.dumps({"classes": ["x"], "directed": False}) + "\n")
        fh.write("{not json\n")
    with pytest.raises(ParseError, match="line 2"):
        load_tag(path)


def test_unknown_label_rejected(tmp_path):
    path = tmp_path / "bad_label.jsonl"
    write_tag(path, ["x"], [(0, "a", "zzz")], [])
    with pytest.raises(ParseError):
        load_tag(path)


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(3)
    classes = ["alpha", "beta", "gamma"]
    nodes = [(i, f"text {i} with unicode éè", classes[int(rng.integers(3))] if i % 3 else None)
             for i in range(20)]
    edges = [(int(a), int(b)) for a, b in rng.integers(0, 20, size=(30, 2)) if a != b]
    path = tmp_path / "g.jsonl"
    write_tag(path, classes, nodes, edges)
    graph = load_tag(path)
    path2 = tmp_path / "g2.jsonl"
    save_tag(graph, path2)
    graph2 = load_tag(path2)
    assert graph == graph2


def test_duplicate_edges_dropped_on_create():
    nodes = [NodeRecord(0, "a", None), NodeRecord(1, "b", None)]
    graph = TextAttributedGraph.create(nodes, [(0, 1), (1, 0), (0, 1), (0, 0)])
    assert graph.edges == ((0, 1),)


def test_direct_constructor_rejects_duplicates():
    nodes = (NodeRecord(0, "a", None), NodeRecord(1, "b", None))
    with pytest.raises(ValidationError):
        TextAttributedGraph(nodes=nodes, edges=((0, 1), (1, 0)))


def test_normalized_adjacency_isolated_node():
    graph = TextAttributedGraph.create([NodeRecord(0, "solo", None)], [])
    npt.assert_array_equal(normalized_adjacency(graph), [[1.0]])


def test_normalized_adjacency_two_node_path():
    # hand evaluation: A+I = ones(2,2), both degrees 2 -> every entry 1/2
    nodes = [NodeRecord(0, "a", None), NodeRecord(1, "b", None)]
    graph = TextAttributedGraph.create(nodes, [(0, 1)])
    npt.assert_allclose(normalized_adjacency(graph), [[0.5, 0.5], [0.5, 0.5]])


def test_normalized_adjacency_permutation_equivariance():
    rng = np.random.default_rng(5)
    n = 12
    nodes = [NodeRecord(i, f"n{i}", None) for i in range(n)]
    edges = {(min(int(a), int(b)), max(int(a), int(b)))
             for a, b in rng.integers(0, n, size=(20, 2)) if a != b}
    graph = TextAttributedGraph.create(nodes, sorted(edges))
    perm = rng.permutation(n)
    permuted_edges = [(int(perm[a]), int(perm[b])) for a, b in graph.edges]
    permuted = TextAttributedGraph.create(
        [NodeRecord(int(perm[i]), f"n{i}", None) for i in range(n)], permuted_edges)
    a1 = normalized_adjacency(graph)
    a2 = normalized_adjacency(permuted)
    npt.assert_array_equal(a2[np.ix_(perm, perm)], a1)


def test_normalized_adjacency_csr_matches_dense():
    rng = np.random.default_rng(7)
    n = 15
    nodes = [NodeRecord(i, f"n{i}", None) for i in range(n)]
    edges = {(min(int(a), int(b)), max(int(a), int(b)))
             for a, b in rng.integers(0, n, size=(30, 2)) if a != b}
    graph = TextAttributedGraph.create(nodes, sorted(edges))
    dense = normalized_adjacency(graph)
    self_coef, edge_coef = normalized_adjacency_coefficients(graph)
    indptr, indices = graph.csr
    rebuilt = np.diag(self_coef)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            rebuilt[i, indices[e]] = edge_coef[e]
    npt.assert_allclose(rebuilt, dense, atol=1e-15)


def star_graph(leaves):
    nodes = [NodeRecord(i, f"n{i}", None) for i in range(leaves + 1)]
    return TextAttributedGraph.create(nodes, [(0, i) for i in range(1, leaves + 1)])


def test_sample_neighbors_under_cap():
    graph = star_graph(5)
    assert sorted(sample_neighbors(graph, 0, cap=20, seed=0)) == [1, 2, 3, 4, 5]


def test_sample_neighbors_respects_cap():
    graph = star_graph(30)
    sample = sample_neighbors(graph, 0, cap=20, seed=1)
    assert len(sample) == 20
    assert len(set(sample)) == 20


def test_sample_neighbors_deterministic_and_clean():
    graph = star_graph(30)
    for seed in range(10):
        a = sample_neighbors(graph, 0, cap=7, seed=seed)
        b = sample_neighbors(graph, 0, cap=7, seed=seed)
        assert a == b
        assert 0 not in a
        assert len(set(a)) == len(a)


def test_sample_neighbors_unknown_node():
    with pytest.raises(KeyError):
        sample_neighbors(star_graph(3), 77)


def labeled_graph(n, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    names = tuple(f"c{i}" for i in range(classes))
    nodes = [NodeRecord(i, f"n{i}", int(rng.integers(classes))) for i in range(n)]
    return TextAttributedGraph.create(nodes, [(i, (i + 1) % n) for i in range(n - 1)],
                                      class_names=names)


def test_make_split_sizes():
    graph = labeled_graph(10)
    split = make_split(graph, (0.6, 0.2, 0.2), seed=0)
    assert (len(split.train), len(split.validation), len(split.test)) == (6, 2, 2)


def test_make_split_all_train():
    graph = labeled_graph(9)
    split = make_split(graph, (1.0, 0.0, 0.0), seed=1)
    assert len(split.train) == 9 and not split.validation and not split.test


def test_make_split_reproducible_and_disjoint():
    graph = labeled_graph(40, classes=3, seed=2)
    s1 = make_split(graph, (0.5, 0.25, 0.25), seed=9)
    s2 = make_split(graph, (0.5, 0.25, 0.25), seed=9)
    assert s1 == s2
    assert not set(s1.train) & set(s1.test)
    s1.validate_against(graph)


def test_make_split_only_labeled():
    nodes = [NodeRecord(0, "a", 0), NodeRecord(1, "b", None), NodeRecord(2, "c", 1)]
    graph = TextAttributedGraph.create(nodes, [(0, 1)], class_names=("x", "y"))
    split = make_split(graph, (1.0, 0.0, 0.0), seed=0)
    assert set(split.train) == {0, 2}


def test_make_split_unlabeled_graph_errors():
    nodes = [NodeRecord(0, "a", None)]
    graph = TextAttributedGraph.create(nodes, [], class_names=("x",))
    with pytest.raises(DataError):
        make_split(graph, (0.6, 0.2, 0.2), seed=0)


def test_shot_split_counts():
    graph = labeled_graph(400, classes=7, seed=1)
    split = make_shot_split(graph, shots=20, seed=0)
    assert len(split.train) == 140  # 20 shots x 7 classes
    labels = graph.labels
    for cls in range(7):
        assert sum(1 for i in split.train if labels[i] == cls) == 20


def test_shot_split_one_shot():
    graph = labeled_graph(50, classes=5, seed=4)
    split = make_shot_split(graph, shots=1, seed=0)
    assert len(split.train) == 5
    assert split.shot_count == 1


def test_shot_split_clamps_small_classes():
    nodes = [NodeRecord(0, "a", 0), NodeRecord(1, "b", 0), NodeRecord(2, "c", 1)]
    graph = TextAttributedGraph.create(nodes, [(0, 1)], class_names=("x", "y"))
    split = make_shot_split(graph, shots=10, seed=0)
    assert set(split.train) == {0, 1, 2}


def test_shot_split_skips_empty_class(caplog):
    nodes = [NodeRecord(0, "a", 0), NodeRecord(1, "b", 0)]
    graph = TextAttributedGraph.create(nodes, [(0, 1)], class_names=("x", "empty"))
    with caplog.at_level("WARNING"):
        split = make_shot_split(graph, shots=1, seed=0)
    assert len(split.train) == 1
    assert any("empty" in rec.message for rec in caplog.records)


def test_graph_dataset_round_trip(tmp_path):
    from graphlm.synth import write_molecule_dataset
    path = write_molecule_dataset(tmp_path / "mols.jsonl", n_graphs=10, seed=0)
    samples = load_graph_dataset(path)
    assert len(samples) == 10
    for sample in samples:
        assert sample.label in (0, 1)
        assert sample.graph.num_nodes >= 5
        assert sample.text


def test_graph_dataset_rejects_unknown_label(tmp_path):
    path = tmp_path / "bad.jsonl"
    with open(path, "w") as fh:
        fh.write(json.dumps({"classes": ["a"], "directed": False}) + "\n")
        fh.write(json.dumps({"nodes": [{"id": 0, "text": "x", "label": None}],
                             "edges": [], "label": "nope"}) + "\n")
    with pytest.raises(ParseError):
        load_graph_dataset(path)
