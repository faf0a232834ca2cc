"""Node feature initialization from text.

Two providers share one interface: a deterministic hashing encoder that
needs no model or network (the default for tests and desk-scale runs),
and a client for an external sentence-embedding service with an on-disk
cache so reruns stay offline.
"""

import hashlib
import json
import threading
import urllib.request
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ProviderError

HASH_FALLBACK = "hash-fallback"
EXTERNAL_PROVIDER = "external-embedding-service"


@dataclass(frozen=True)
class TextEncoderConfig:
    provider: str = HASH_FALLBACK
    d: int = 384
    normalization: str = "l2"
    seed: int = 0
    max_chars: Optional[int] = None
    endpoint: str = ""
    timeout: float = 10.0
    max_batch: int = 64
    retries: int = 2
    cache_path: Optional[str] = None

    def __post_init__(self):
        if self.d <= 0:
            raise ConfigError("embedding dimension must be positive")
        if self.provider not in (HASH_FALLBACK, EXTERNAL_PROVIDER):
            raise ConfigError(f"unknown text provider {self.provider!r}")
        if self.normalization not in ("l2", "none"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")


@dataclass
class NodeFeatureMatrix:
    matrix: np.ndarray
    d: int
    provider_name: str

    def __post_init__(self):
        if self.matrix.shape[1] != self.d or not np.isfinite(self.matrix).all():
            raise ConfigError("feature matrix shape or values inconsistent")


def _tokenize(text):
    tokens, current = [], []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def _hash_encode(text, d):
    vec = np.zeros(d, dtype=np.float64)
    for token in _tokenize(text):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9).digest()
        bucket = int.from_bytes(digest[:8], "little") % d
        sign = 1.0 if digest[8] & 1 else -1.0
        vec[bucket] += sign
    return vec


def encode_text(text, config, client=None):
    """Embed one text string; deterministic for a fixed (text, config)."""
    if config.max_chars is not None:
        text = text[:config.max_chars]
    if config.provider == HASH_FALLBACK:
        vec = _hash_encode(text, config.d)
    else:
        client = client or ExternalEmbeddingClient(config)
        vec = client.encode_batch([text])[0]
    if config.normalization == "l2":
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
    return vec


def encode_nodes(graph, config, client=None):
    """Feature matrix with one row per node, row i belonging to node id i."""
    if config.provider == HASH_FALLBACK:
        rows = [encode_text(node.text, config) for node in graph.nodes]
    else:
        client = client or ExternalEmbeddingClient(config)
        texts = [node.text if config.max_chars is None else node.text[:config.max_chars]
                 for node in graph.nodes]
        rows = client.encode_batch(texts)
        if config.normalization == "l2":
            rows = [v / n if (n := np.linalg.norm(v)) > 0 else v for v in rows]
    return NodeFeatureMatrix(
        matrix=np.asarray(rows, dtype=np.float64).reshape(graph.num_nodes, config.d),
        d=config.d,
        provider_name=config.provider,
    )


def _text_digest(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only on-disk cache of (text digest, provider) -> vector.

    Writes are serialized with a lock; the file is line-delimited JSON so a
    partially written final line from a crashed run is skipped on load.
    """

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._entries = {}
        self._load()

    def _load(self):
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    try:
                        record = json.loads(line)
                        key = (record["provider"], record["digest"])
                        self._entries[key] = np.asarray(record["vector"], dtype=np.float64)
                    except (json.JSONDecodeError, KeyError):
                        continue
        except FileNotFoundError:
            pass

    def get(self, provider, text):
        return self._entries.get((provider, _text_digest(text)))

    def put(self, provider, text, vector):
        digest = _text_digest(text)
        with self._lock:
            self._entries[(provider, digest)] = np.asarray(vector, dtype=np.float64)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({
                    "provider": provider,
                    "digest": digest,
                    "vector": [float(v) for v in vector],
                }) + "\n")


class ExternalEmbeddingClient:
    """Batch client for the external embedding endpoint.

    Request body: {"texts": [...]}; response: {"vectors": [[...], ...]} with
    one vector of length d per input text.  ``transport`` can be injected
    for tests; the default posts JSON over HTTP.
    """

    def __init__(self, config, transport=None, cache=None):
        if not config.endpoint and transport is None:
            raise ConfigError("external provider requires an endpoint")
        self.config = config
        self.transport = transport or self._http_transport
        self.cache = cache
        if cache is None and config.cache_path:
            self.cache = EmbeddingCache(config.cache_path)

    def _http_transport(self, texts):
        body = json.dumps({"texts": texts}).encode("utf-8")
        request = urllib.request.Request(
            self.config.endpoint, data=body,
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(request, timeout=self.config.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))["vectors"]

    def encode_batch(self, texts):
        out = [None] * len(texts)
        missing = []
        for i, text in enumerate(texts):
            cached = self.cache.get(self.config.provider, text) if self.cache else None
            if cached is not None:
                out[i] = cached
            else:
                missing.append(i)
        for start in range(0, len(missing), self.config.max_batch):
            chunk = missing[start:start + self.config.max_batch]
            vectors = self._call([texts[i] for i in chunk])
            for i, vec in zip(chunk, vectors):
                vec = np.asarray(vec, dtype=np.float64)
                if vec.shape != (self.config.d,):
                    raise ProviderError(
                        f"provider returned a vector of length {vec.shape[0]}, expected {self.config.d}")
                out[i] = vec
                if self.cache is not None:
                    self.cache.put(self.config.provider, texts[i], vec)
        return out

    def _call(self, texts):
        last = None
        for attempt in range(self.config.retries + 1):
            try:
                return self.transport(texts)
            except ProviderError:
                raise
            except Exception as exc:  # network and decode failures alike
                last = exc
        raise ProviderError(f"embedding provider unreachable: {last}", retries=self.config.retries)
