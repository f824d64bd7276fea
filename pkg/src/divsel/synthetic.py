"""Seeded synthetic corpora: Gaussian clusters around random unit centers."""
from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingSet
from .errors import ConfigError


def clustered_vectors(n: int, d: int, clusters: int, noise: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(vectors, assignment)``; point ``i`` belongs to cluster ``i % clusters``."""
    centers = rng.standard_normal((clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assignment = np.arange(n) % clusters
    vectors = centers[assignment] + noise * rng.standard_normal((n, d))
    return vectors, assignment


def generate_synthetic(n: int, d: int, clusters: int, noise: float, seed: int,
                       role: str = "corpus", prefix: str = "s") -> EmbeddingSet:
    if not (n >= clusters >= 1):
        raise ConfigError(f"need n >= clusters >= 1 (n={n}, clusters={clusters})")
    if d < 2:
        raise ConfigError(f"need d >= 2, got {d}")
    if not noise >= 0:
        raise ConfigError(f"noise must be nonnegative, got {noise}")
    rng = np.random.default_rng(seed)
    vectors, assignment = clustered_vectors(n, d, clusters, noise, rng)
    width = max(4, len(str(n - 1)))
    ids = tuple(f"{prefix}{i:0{width}d}" for i in range(n))
    labels = tuple(f"cluster_{c}" for c in assignment)
    return EmbeddingSet(ids, labels, vectors, role)
