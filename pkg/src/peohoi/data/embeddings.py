"""Word-vector tables in GloVe text format."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from ..numcore import derive_seed

log = logging.getLogger(__name__)

FALLBACK_SEED = 20240917


class EmbeddingTable:
    """Token -> vector map with a deterministic fallback for unknown tokens.

    Unknown multi-word names (``hold_hand_of``) average the vectors of any
    known parts before falling back to a hash-derived unit vector.
    """

    def __init__(self, dim, vectors=None, seed=FALLBACK_SEED):
        self.dim = int(dim)
        self.seed = seed
        self.vectors = {}
        for tok, vec in (vectors or {}).items():
            self[tok] = vec

    def __setitem__(self, token, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise SchemaError(f"token {token!r}: vector length {vec.size} != {self.dim}")
        self.vectors[token] = vec

    def __contains__(self, token):
        return token in self.vectors

    def __len__(self):
        return len(self.vectors)

    def fallback(self, token):
        rng = np.random.default_rng(derive_seed(self.seed, token))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def lookup(self, token):
        if token in self.vectors:
            return self.vectors[token]
        parts = [p for p in token.replace("-", "_").split("_") if p in self.vectors]
        if parts:
            return np.mean([self.vectors[p] for p in parts], axis=0)
        return self.fallback(token)

    def matrix(self, tokens):
        return np.stack([self.lookup(t) for t in tokens]) if tokens else np.zeros((0, self.dim))

    def write(self, path):
        lines = [" ".join([tok] + [repr(float(x)) for x in vec]) for tok, vec in self.vectors.items()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_embeddings(path, dim, seed=FALLBACK_SEED):
    table = EmbeddingTable(dim, seed=seed)
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise SchemaError(f"embedding line {lineno}: token {token!r} has {len(values)} values, expected {dim}")
            if token in table:
                log.warning("embedding token %r repeated at line %d; keeping the last vector", token, lineno)
            try:
                table[token] = [float(v) for v in values]
            except ValueError:
                raise SchemaError(f"embedding line {lineno}: token {token!r} has a non-numeric value") from None
    return table
