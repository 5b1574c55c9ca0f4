"""Instruction embeddings, k-means, clustering metrics and the task resolver."""

from __future__ import annotations

import hashlib
import string
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

EMBED_DIM = 128

# function words dropped before hashing; content words carry the task identity
STOPWORDS = frozenset("""
a an the to of on in into onto at by for from with and then now please
it its this that these those up over toward towards go can you could would
robot gripper arm
""".split())

_PUNCT = str.maketrans({c: " " for c in string.punctuation})


class InvalidInstructionError(ValueError):
    pass


class UnknownTaskError(LookupError):
    """The instruction could not be mapped to any task in the dataset."""


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    source_text: str


def tokenize(text: str) -> List[str]:
    return [t for t in text.lower().translate(_PUNCT).split() if t not in STOPWORDS]


def _hash_token(token: str, seed: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                             key=seed.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little")


def embed(instruction: str, dim: int = EMBED_DIM, seed: int = 0) -> Embedding:
    """Signed feature hashing of the content tokens, L2-normalised."""
    tokens = tokenize(instruction)
    if not tokens:
        raise InvalidInstructionError(f"no content tokens in {instruction!r}")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        h = _hash_token(tok, seed)
        vec[h % dim] += 1.0 if (h >> 63) & 1 == 0 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0:
        # every token collided with an opposite sign; fall back to the first bucket
        vec[_hash_token(tokens[0], seed) % dim] = 1.0
        norm = 1.0
    return Embedding(vec / norm, instruction)


def embed_many(instructions: Sequence[str], dim: int = EMBED_DIM, seed: int = 0) -> np.ndarray:
    return np.stack([embed(s, dim, seed).vector for s in instructions])


# ---------------------------------------------------------------------------
# k-means

@dataclass
class Clustering:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: List[float]
    n_iter: int

    def predict(self, points: np.ndarray) -> np.ndarray:
        d = _sq_dists(np.atleast_2d(points), self.centroids)
        return np.argmin(d, axis=1)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; reuse the lowest-index point
            idx = 0
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> Clustering:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    history = [float(_sq_dists(x, centroids)[np.arange(n), labels].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        d = _sq_dists(x, centroids)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(_sq_dists(x, centroids)[np.arange(n), labels].sum())
    return Clustering(k, centroids, labels, inertia, history, it)


# ---------------------------------------------------------------------------
# metrics

def _pairwise(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(_sq_dists(x, x), 0.0))


def silhouette(points, labels) -> float:
    """Mean silhouette with Euclidean distance; singleton clusters score 0."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    d = _pairwise(x)
    scores = np.zeros(len(x))
    for i in range(len(x)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == u].mean() for u in uniq if u != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def _contingency(true_labels, pred_labels) -> np.ndarray:
    t = np.asarray(true_labels)
    p = np.asarray(pred_labels)
    if t.shape != p.shape:
        raise ValueError(f"label sequences differ in length: {t.shape} vs {p.shape}")
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    table = np.zeros((ti.max(initial=-1) + 1, pi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def _comb2(v):
    v = np.asarray(v, dtype=np.float64)
    return v * (v - 1) / 2.0


def ari(true_labels, pred_labels) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    table = _contingency(true_labels, pred_labels)
    n = table.sum()
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = rows * cols / total if total else 0.0
    max_index = (rows + cols) / 2.0
    if max_index == expected:
        # both partitions trivial (one cluster, or all singletons): perfect agreement
        return 1.0
    return float((index - expected) / (max_index - expected))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels) -> float:
    """Mutual information over the arithmetic mean of the two entropies (nats)."""
    table = _contingency(true_labels, pred_labels).astype(np.float64)
    n = table.sum()
    if n == 0:
        return 1.0
    ht = _entropy(table.sum(axis=1))
    hp = _entropy(table.sum(axis=0))
    if ht == 0 and hp == 0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n ** 2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    denom = (ht + hp) / 2.0
    return float(min(max(mi / denom, 0.0), 1.0))


def pca_2d(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    # fix the sign so output does not depend on the SVD backend
    for j in range(proj.shape[1]):
        col = proj[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            proj[:, j] = -col
    if proj.shape[1] < 2:
        proj = np.hstack([proj, np.zeros((len(proj), 2 - proj.shape[1]))])
    return proj


# ---------------------------------------------------------------------------
# resolver

class TaskResolver:
    """Nearest-centroid mapping from an instruction to a task label.

    Each cluster is named after the majority task label of its training members.
    """

    def __init__(self, clustering: Clustering, cluster_labels: Dict[int, str],
                 vocabulary: frozenset, dim: int = EMBED_DIM, seed: int = 0):
        self.clustering = clustering
        self.cluster_labels = cluster_labels
        self.vocabulary = vocabulary
        self.dim = dim
        self.seed = seed

    @classmethod
    def fit(cls, instructions: Sequence[str], task_labels: Sequence[str],
            k: Optional[int] = None, seed: int = 0, dim: int = EMBED_DIM) -> "TaskResolver":
        if len(instructions) != len(task_labels):
            raise ValueError("instructions and labels differ in length")
        # duplicate phrasings would only reweight centroids; cluster distinct pairs
        pairs = sorted(set(zip(instructions, task_labels)))
        texts = [p[0] for p in pairs]
        labels = [p[1] for p in pairs]
        k = len(set(labels)) if k is None else k
        x = embed_many(texts, dim, seed)
        cl = kmeans(x, k, seed=seed)
        mapping: Dict[int, str] = {}
        for j in range(k):
            members = [labels[i] for i in np.flatnonzero(cl.labels == j)]
            if members:
                counts = Counter(members)
                top = max(counts.values())
                mapping[j] = min(lab for lab, c in counts.items() if c == top)
        vocab = frozenset(tok for t in texts for tok in tokenize(t))
        return cls(cl, mapping, vocab, dim, seed)

    def resolve(self, instruction: str) -> str:
        """Total mapping: any instruction with content tokens gets a label."""
        vec = embed(instruction, self.dim, self.seed).vector
        cluster = int(self.clustering.predict(vec[None, :])[0])
        if cluster not in self.cluster_labels:
            raise UnknownTaskError(f"cluster {cluster} has no task label")
        return self.cluster_labels[cluster]

    def resolve_known(self, instruction: str) -> str:
        """Like :meth:`resolve` but rejects instructions with no known word."""
        try:
            tokens = tokenize(instruction)
        except AttributeError:
            raise UnknownTaskError(f"not an instruction: {instruction!r}") from None
        if not any(t in self.vocabulary for t in tokens):
            raise UnknownTaskError(f"cannot resolve instruction {instruction!r}")
        return self.resolve(instruction)
