"""Top-k function retrieval over embedded function descriptions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .digest import fnv1a_64
from .errors import BackendUnavailable, KTooLarge, PreconditionViolation
from .schema import SchemaRegistry

DEFAULT_DIM = 256
DEFAULT_K = 4

Embedder = Union[str, Callable[[str], "np.ndarray | list[float]"]]


def bow_tokens(text: str) -> list[str]:
    return text.lower().split()


def hashed_bow(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Token counts hashed into ``dim`` buckets, L2-normalised (zero vector for no tokens)."""
    vec = np.zeros(dim, dtype=np.float64)
    for tok in bow_tokens(text):
        vec[fnv1a_64(tok.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embed(text: str, embedder: Embedder = "hashed_bow", dim: int = DEFAULT_DIM) -> np.ndarray:
    if embedder == "hashed_bow":
        return hashed_bow(text, dim)
    if not callable(embedder):
        raise BackendUnavailable(f"unknown embedder {embedder!r}")
    try:
        raw = np.asarray(embedder(text), dtype=np.float64)
    except Exception as exc:
        raise BackendUnavailable(f"external embedder failed: {exc}") from exc
    norm = np.linalg.norm(raw)
    return raw / norm if norm > 0 else raw


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    # inputs are unit vectors (or zero), so the dot product is the cosine
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def function_text(schema) -> str:
    return f"{schema.name} {schema.description}"


@dataclass
class VectorIndex:
    dim: int
    names: list[str] = field(default_factory=list)
    vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, DEFAULT_DIM)))
    embedder: Embedder = "hashed_bow"

    def __len__(self) -> int:
        return len(self.names)

    def to_json(self) -> str:
        return json.dumps(
            {"dim": self.dim, "entries": [{"name": n, "vector": v.tolist()} for n, v in zip(self.names, self.vectors)]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> VectorIndex:
        data = json.loads(text)
        names = [e["name"] for e in data["entries"]]
        vectors = np.array([e["vector"] for e in data["entries"]], dtype=np.float64).reshape(len(names), data["dim"])
        return cls(data["dim"], names, vectors)


def index_functions(registry: SchemaRegistry, embedder: Embedder = "hashed_bow", dim: int = DEFAULT_DIM) -> VectorIndex:
    if len(registry) == 0:
        raise PreconditionViolation("cannot index an empty registry")
    names = [s.name for s in registry]
    vectors = np.stack([embed(function_text(s), embedder, dim) for s in registry])
    return VectorIndex(vectors.shape[1], names, vectors, embedder)


def query(index: VectorIndex, text: str, k: int = DEFAULT_K) -> list[tuple[str, float]]:
    """Top-k (name, cosine) pairs, best first; equal scores ordered by name."""
    if k < 1:
        raise PreconditionViolation("k must be at least 1")
    if k > len(index):
        raise KTooLarge(f"k={k} exceeds index size {len(index)}")
    q = embed(text, index.embedder, index.dim)
    scores = index.vectors @ q
    ranked = sorted(zip(index.names, scores.tolist()), key=lambda item: (-round(item[1], 12), item[0]))
    return ranked[:k]
