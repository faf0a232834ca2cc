import numpy as np
import numpy.testing as npt
import pytest

from graphlm.errors import ProviderError
from graphlm.graph import NodeRecord, TextAttributedGraph
from graphlm.textenc import (EXTERNAL_PROVIDER, EmbeddingCache,
                             ExternalEmbeddingClient, TextEncoderConfig,
                             encode_nodes, encode_text)


def test_empty_text_is_zero_vector():
    cfg = TextEncoderConfig(d=32)
    npt.assert_array_equal(encode_text("", cfg), np.zeros(32))


def test_encoding_deterministic():
    cfg = TextEncoderConfig(d=64)
    a = encode_text("graph neural network", cfg)
    b = encode_text("graph neural network", cfg)
    npt.assert_array_equal(a, b)


def test_unit_norm_at_default_width():
    cfg = TextEncoderConfig(d=384)
    vec = encode_text("graph neural network", cfg)
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6


def test_normalization_none_keeps_counts():
    cfg = TextEncoderConfig(d=16, normalization="none")
    vec = encode_text("apple apple apple", cfg)
    assert np.abs(vec).max() == 3.0


def test_tokenization_ignores_punctuation_and_case():
    cfg = TextEncoderConfig(d=128)
    npt.assert_array_equal(encode_text("Hello, World!", cfg),
                           encode_text("hello world", cfg))


def test_max_chars_truncates():
    cfg = TextEncoderConfig(d=64, max_chars=5)
    npt.assert_array_equal(encode_text("apple banana", cfg), encode_text("apple", cfg))


def small_graph(texts):
    nodes = [NodeRecord(i, t, None) for i, t in enumerate(texts)]
    edges = [(i, i + 1) for i in range(len(texts) - 1)]
    return TextAttributedGraph.create(nodes, edges, class_names=())


def test_encode_nodes_shape_and_rows():
    graph = small_graph(["apple pie", "same words", "same words"])
    feats = encode_nodes(graph, TextEncoderConfig(d=48))
    assert feats.matrix.shape == (3, 48)
    npt.assert_array_equal(feats.matrix[1], feats.matrix[2])
    assert feats.provider_name == "hash-fallback"


def test_encode_nodes_empty_text_row_zero():
    graph = small_graph(["words here", ""])
    feats = encode_nodes(graph, TextEncoderConfig(d=48))
    npt.assert_array_equal(feats.matrix[1], np.zeros(48))


def test_structure_independence():
    # same texts, different edges -> identical features
    texts = ["one two", "three", "four five six"]
    nodes = [NodeRecord(i, t, None) for i, t in enumerate(texts)]
    g1 = TextAttributedGraph.create(nodes, [(0, 1)])
    g2 = TextAttributedGraph.create(nodes, [(1, 2), (0, 2)])
    cfg = TextEncoderConfig(d=32)
    npt.assert_array_equal(encode_nodes(g1, cfg).matrix, encode_nodes(g2, cfg).matrix)


def test_single_text_change_touches_one_row():
    cfg = TextEncoderConfig(d=32)
    g1 = small_graph(["alpha", "beta", "gamma"])
    g2 = small_graph(["alpha", "CHANGED text", "gamma"])
    m1 = encode_nodes(g1, cfg).matrix
    m2 = encode_nodes(g2, cfg).matrix
    npt.assert_array_equal(m1[0], m2[0])
    npt.assert_array_equal(m1[2], m2[2])
    assert not np.array_equal(m1[1], m2[1])


def test_cache_round_trip(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = EmbeddingCache(str(path))
    cache.put("prov", "hello", np.arange(4.0))
    reloaded = EmbeddingCache(str(path))
    npt.assert_array_equal(reloaded.get("prov", "hello"), np.arange(4.0))
    assert reloaded.get("prov", "other") is None


def _client(cfg, transport, cache=None):
    return ExternalEmbeddingClient(cfg, transport=transport, cache=cache)


def test_external_client_batches_and_caches(tmp_path):
    calls = []

    def transport(texts):
        calls.append(list(texts))
        return [[float(len(t))] * 4 for t in texts]

    cfg = TextEncoderConfig(provider=EXTERNAL_PROVIDER, d=4, max_batch=2,
                            endpoint="http://unused")
    cache = EmbeddingCache(str(tmp_path / "c.jsonl"))
    client = _client(cfg, transport, cache)
    out = client.encode_batch(["a", "bb", "ccc"])
    assert [len(c) for c in calls] == [2, 1]
    npt.assert_array_equal(out[1], [2.0] * 4)
    # cached now: no further transport calls
    client.encode_batch(["a", "bb", "ccc"])
    assert len(calls) == 2


def test_external_client_retries_then_fails():
    attempts = []

    def transport(texts):
        attempts.append(1)
        raise OSError("connection refused")

    cfg = TextEncoderConfig(provider=EXTERNAL_PROVIDER, d=4, retries=2,
                            endpoint="http://unused")
    with pytest.raises(ProviderError, match="after 2 retries"):
        _client(cfg, transport).encode_batch(["x"])
    assert len(attempts) == 3


def test_external_client_rejects_bad_width():
    cfg = TextEncoderConfig(provider=EXTERNAL_PROVIDER, d=4, endpoint="http://unused")
    with pytest.raises(ProviderError):
        _client(cfg, lambda texts: [[1.0, 2.0]]).encode_batch(["x"])


def test_external_encode_nodes_normalizes():
    cfg = TextEncoderConfig(provider=EXTERNAL_PROVIDER, d=3, endpoint="http://unused")
    graph = small_graph(["a", "b"])
    client = _client(cfg, lambda texts: [[3.0, 0.0, 4.0] for _ in texts])
    feats = encode_nodes(graph, cfg, client=client)
    npt.assert_allclose(np.linalg.norm(feats.matrix, axis=1), [1.0, 1.0])
