"""Embedding contract, cosine scoring, and a deterministic mock embedder.

All vectors handed to the graph are float32 and unit L2 norm, so cosine
ranking and maximum inner product search coincide. The mock embedder is a
hashed bag-of-tokens projection: pure, seedless state, stable across
processes, good enough to make retrieval behave like the real thing in tests.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidArgumentError

# Salt folded into every token hash so the projection is a fixed function of
# the text alone, not of Python's per-process hash randomization.
_HASH_SALT = b"memweave-mock-embedder-v1"

_TOKEN_RE = re.compile(r"[a-z0-9]+")

UNIT_NORM_TOL = 1e-6


class Embedder(Protocol):
    """Anything that maps text to a unit-norm vector of a fixed dimension."""

    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def as_unit_vector(values: Sequence[float] | np.ndarray, dimension: int | None = None) -> np.ndarray:
    """Validate and return a float32 unit vector, normalizing within tolerance."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise InvalidArgumentError(f"expected a 1-d vector, got shape {vec.shape}")
    if dimension is not None and vec.shape[0] != dimension:
        raise InvalidArgumentError(f"expected dimension {dimension}, got {vec.shape[0]}")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        raise InvalidArgumentError("cannot normalize a zero or non-finite vector")
    return (vec / norm).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; equals the inner product for unit vectors.

    Accumulates in float64 so the result tracks a high-precision sum.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    num = float(np.dot(a.astype(np.float64), b.astype(np.float64)))
    denom = float(np.linalg.norm(a.astype(np.float64)) * np.linalg.norm(b.astype(np.float64)))
    if denom == 0.0:
        raise InvalidArgumentError("cosine undefined for zero vectors")
    return max(-1.0, min(1.0, num / denom))


def average_similarity(query: np.ndarray, snapshots: Sequence[np.ndarray]) -> float:
    """Arithmetic mean of cosines between the query and each snapshot."""
    if len(snapshots) == 0:
        raise InvalidArgumentError("average_similarity requires at least one snapshot")
    return sum(cosine(query, snap) for snap in snapshots) / len(snapshots)


class MockEmbedder:
    """Deterministic stand-in for an external text embedding model.

    Each lowercase alphanumeric token is hashed into a coordinate and a sign;
    token vectors are summed and L2-normalized. Identical strings embed
    identically, and overlapping token sets raise similarity monotonically
    with the overlap.
    """

    def __init__(self, dimension: int = 64):
        if dimension < 8:
            raise InvalidArgumentError(f"mock embedder needs dimension >= 8, got {dimension}")
        self.dimension = dimension

    def _token_vector(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), key=_HASH_SALT, digest_size=8).digest()
        raw = int.from_bytes(digest, "little")
        index = raw % self.dimension
        sign = 1.0 if (raw >> 63) & 1 else -1.0
        return index, sign

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            tokens = [text]
        acc = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            index, sign = self._token_vector(token)
            acc[index] += sign
        if not acc.any():
            # Token signs cancelled exactly; fall back to a fixed direction.
            acc[0] = 1.0
        return as_unit_vector(acc, self.dimension)


class HttpEmbedder:
    """Adapter for a remote embedding service.

    Speaks ``POST {input: str} -> {embedding: [float]}``. Endpoint, auth
    header, and dimension come from configuration; not used by the test
    suite except against a local stub.
    """

    def __init__(self, endpoint: str, dimension: int, auth_header: str | None = None,
                 timeout: float = 30.0):
        self.endpoint = endpoint
        self.dimension = dimension
        self.auth_header = auth_header
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.auth_header:
            headers["Authorization"] = self.auth_header
        resp = requests.post(self.endpoint, json={"input": text}, headers=headers,
                             timeout=self.timeout)
        resp.raise_for_status()
        payload = resp.json()
        return as_unit_vector(payload["embedding"], self.dimension)
