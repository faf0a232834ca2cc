"""Graph-token containers shared by the alignment stage and the LM."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass
class GraphTokenBlock:
    """One encoder's reshaped node representation, cut into token vectors."""

    gnn_index: int
    vectors: list

    def __post_init__(self):
        width = None
        for vec in self.vectors:
            if width is None:
                width = vec.shape[0]
            if vec.ndim != 1 or vec.shape[0] != width or not np.isfinite(vec).all():
                raise DimensionError("graph-token vectors must be finite, equal-length 1-d arrays")

    @property
    def tokens_per_node(self):
        return len(self.vectors)

    @property
    def width(self):
        return self.vectors[0].shape[0] if self.vectors else 0


def segment_tokens(vector, t, e):
    """Cut a length t*e vector into t contiguous vectors of length e."""
    vector = np.asarray(vector)
    if vector.ndim != 1 or vector.shape[0] != t * e:
        raise DimensionError(
            f"expected a vector of length {t}*{e}={t * e}, got shape {vector.shape}")
    return [vector[i * e:(i + 1) * e].copy() for i in range(t)]
