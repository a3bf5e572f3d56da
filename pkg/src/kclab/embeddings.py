"""Embedding access plus the vector geometry used by the mapping pipeline.

Stores are loaded from a JSONL fixture (one ``{"id": ..., "vector": [...]}``
object per line) or backed by a remote embedding endpoint whose results are
appended to the same file. Clustering is plain Lloyd's with k-means++
seeding; cosine distance is reserved for nearest-exemplar search.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

KMEANS_MAX_ITER = 100


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class Embedding:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float)
        object.__setattr__(self, "vector", vec)
        if vec.ndim != 1 or vec.size == 0:
            raise EmbeddingError(f"embedding {self.id!r}: vector must be 1-D and non-empty")
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"embedding {self.id!r}: vector contains non-finite values")


@dataclass(frozen=True)
class ClusterResult:
    assignments: dict[str, int]
    centroids: np.ndarray  # shape (k, d)
    inertia: float
    inertia_history: tuple[float, ...] = ()


class EmbeddingStore:
    """Dimension-checked id -> vector lookup, optionally remote-backed.

    In remote mode an unknown id is embedded by POSTing its code text to
    ``base_url`` and the result is appended to the JSONL file, so later runs
    are offline.
    """

    def __init__(self, path: str | Path | None = None, base_url: str | None = None,
                 timeout: float = 60.0):
        self.path = Path(path) if path is not None else None
        self.base_url = base_url
        self.timeout = timeout
        self.dimension: int | None = None
        self._vectors: dict[str, Embedding] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.is_file():
            self._load(self.path)

    def _load(self, path: Path) -> None:
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    emb = Embedding(id=obj["id"], vector=np.asarray(obj["vector"], dtype=float))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise EmbeddingError(f"{path.name} line {line_no}: {exc}") from None
                self._check_dimension(emb)
                self._vectors[emb.id] = emb

    def _check_dimension(self, emb: Embedding) -> None:
        # Stored code embeddings feed cosine geometry, so zero vectors are
        # rejected here rather than in the Embedding type itself.
        if np.linalg.norm(emb.vector) == 0:
            raise EmbeddingError(f"embedding {emb.id!r}: vector has zero norm")
        if self.dimension is None:
            self.dimension = emb.vector.size
        elif emb.vector.size != self.dimension:
            raise EmbeddingError(
                f"embedding {emb.id!r} has dimension {emb.vector.size}, "
                f"store holds {self.dimension}"
            )

    def __contains__(self, code_id: str) -> bool:
        return code_id in self._vectors

    def get_embedding(self, code_id: str, code: str | None = None) -> Embedding:
        with self._lock:
            if code_id in self._vectors:
                return self._vectors[code_id]
        if self.base_url is None:
            raise EmbeddingError(f"no embedding for id {code_id!r} in the store")
        if code is None:
            raise EmbeddingError(
                f"id {code_id!r} not cached and no code text given for remote embedding"
            )
        resp = requests.post(self.base_url, json={"input": code}, timeout=self.timeout)
        resp.raise_for_status()
        emb = Embedding(id=code_id, vector=np.asarray(resp.json()["vector"], dtype=float))
        with self._lock:
            self._check_dimension(emb)
            self._vectors[code_id] = emb
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"id": emb.id, "vector": emb.vector.tolist()}) + "\n")
        return emb


def cosine_distance(u, v) -> float:
    """1 - cosine similarity; in [0, 2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise EmbeddingError("cosine distance undefined for zero-norm vectors")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    dist_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = dist_sq.sum()
        if total == 0:
            centroids[i] = points[rng.integers(n)]
        else:
            centroids[i] = points[rng.choice(n, p=dist_sq / total)]
        dist_sq = np.minimum(dist_sq, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(points: list[Embedding], k: int, seed: int) -> ClusterResult:
    """Deterministic Lloyd's iterations from seeded k-means++ initialization.

    An emptied cluster is reseeded to the point currently farthest from its
    assigned centroid.
    """
    if not points:
        raise EmbeddingError("kmeans needs at least one point")
    if k < 1 or k > len(points):
        raise EmbeddingError(f"k must be in 1..{len(points)}, got {k}")
    dims = {p.vector.size for p in points}
    if len(dims) > 1:
        raise EmbeddingError(f"mixed dimensions: {sorted(dims)}")

    data = np.stack([p.vector for p in points])
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, k, rng)

    assignments = np.full(len(points), -1)
    history: list[float] = []
    for _ in range(KMEANS_MAX_ITER):
        dist_sq = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignments = dist_sq.argmin(axis=1)
        per_point = dist_sq[np.arange(len(points)), new_assignments]
        for cluster in range(k):
            mask = new_assignments == cluster
            if mask.any():
                continue
            farthest = int(per_point.argmax())
            centroids[cluster] = data[farthest]
            new_assignments[farthest] = cluster
            dist_sq = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            per_point = dist_sq[np.arange(len(points)), new_assignments]
        history.append(float(per_point.sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for cluster in range(k):
            centroids[cluster] = data[assignments == cluster].mean(axis=0)

    dist_sq = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dist_sq[np.arange(len(points)), assignments].sum())
    history.append(inertia)
    return ClusterResult(
        assignments={p.id: int(a) for p, a in zip(points, assignments)},
        centroids=centroids,
        inertia=inertia,
        inertia_history=tuple(history),
    )


def nearest(query, candidates: list[Embedding]) -> str:
    """Id of the candidate at minimal cosine distance; ties go to the smaller id."""
    if not candidates:
        raise EmbeddingError("no candidates to search")
    best_id = None
    best = None
    for cand in sorted(candidates, key=lambda c: c.id):
        d = cosine_distance(query, cand.vector)
        if best is None or d < best:
            best, best_id = d, cand.id
    return best_id
