"""Post-hoc hierarchical pooling of document token embeddings.

Shrinks a document from n tokens to ceil(n / pool_factor) prototype tokens
by agglomerative clustering: average linkage over cosine distance (1 - dot
on unit rows), merging until the target cluster count is reached. Each
cluster is replaced by the re-normalized arithmetic mean of its members.

Merges tie-break on the lexicographically smallest pair of original row
indices, so the dendrogram (and therefore the output) is bit-reproducible.
Queries are never pooled; only document sets pass :func:`pool_corpus`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embstore import KIND_DOCUMENT, EmbeddingSet
from .errors import KindMismatch


@dataclass(frozen=True)
class PoolingConfig:
    pool_factor: int = 1
    linkage: str = "average"
    protect_first_token: bool = False

    def __post_init__(self):
        if self.pool_factor < 1:
            raise ValueError(f"pool_factor must be >= 1, got {self.pool_factor}")
        if self.linkage != "average":
            raise ValueError(f"unsupported linkage {self.linkage!r}")


def _cluster_rows(rows: np.ndarray, target: int) -> list[list[int]]:
    """Agglomerate row indices into `target` clusters, average linkage.

    Returns clusters ordered by their smallest member index. Ties on merge
    distance resolve to the pair with the smallest (min_index_a, min_index_b).
    """
    m = rows.shape[0]
    clusters = [[i] for i in range(m)]
    if m <= target:
        return clusters

    r64 = rows.astype(np.float64)
    dist = 1.0 - r64 @ r64.T
    np.fill_diagonal(dist, np.inf)
    active = np.ones(m, dtype=bool)
    key = np.arange(m)  # smallest original index in each cluster slot
    size = np.ones(m, dtype=np.int64)

    for _ in range(m - target):
        dmin = dist.min()
        ties = np.argwhere(dist == dmin)
        # orient each candidate pair as (smaller key, larger key)
        best = None
        for a, b in ties:
            ka, kb = int(key[a]), int(key[b])
            pair = (ka, kb) if ka < kb else (kb, ka)
            if best is None or pair < best[0]:
                keep, drop = (a, b) if ka < kb else (b, a)
                best = (pair, int(keep), int(drop))
        _, keep, drop = best

        # Lance-Williams update keeps averages over original pair distances
        w_keep, w_drop = size[keep], size[drop]
        merged = (w_keep * dist[keep] + w_drop * dist[drop]) / (w_keep + w_drop)
        dist[keep, :] = merged
        dist[:, keep] = merged
        dist[keep, keep] = np.inf
        dist[drop, :] = np.inf
        dist[:, drop] = np.inf

        clusters[keep] = clusters[keep] + clusters[drop]
        clusters[drop] = []
        size[keep] += w_drop
        active[drop] = False

    out = [clusters[i] for i in range(m) if active[i]]
    out.sort(key=min)
    return out


def pool_tokens(doc: np.ndarray, cfg: PoolingConfig) -> np.ndarray:
    """Pool one document's token matrix down by cfg.pool_factor.

    pool_factor == 1 is the identity (bit-exact). Otherwise the output has
    max(1, ceil(n / pool_factor)) rows, plus the held-out first token when
    protect_first_token is set and the document has at least two tokens.
    """
    n = doc.shape[0]
    if cfg.pool_factor == 1 or n == 1:
        return doc
    target = max(1, math.ceil(n / cfg.pool_factor))
    protect = cfg.protect_first_token and n >= 2
    work = doc[1:] if protect else doc

    clusters = _cluster_rows(work, target)
    work64 = work.astype(np.float64)
    protos = np.empty((len(clusters), doc.shape[1]), dtype=np.float32)
    for ci, members in enumerate(clusters):
        mean = work64[members].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm > 0:
            mean = mean / norm
        protos[ci] = mean.astype(np.float32)
    if protect:
        return np.concatenate([doc[:1], protos], axis=0)
    return protos


def pool_corpus(emb_set: EmbeddingSet, cfg: PoolingConfig) -> EmbeddingSet:
    """Pool every document in a set; ids and order are preserved."""
    if emb_set.kind != KIND_DOCUMENT:
        raise KindMismatch("pooling applies to document sets only")
    if cfg.pool_factor == 1:
        return emb_set
    return EmbeddingSet(
        dim=emb_set.dim,
        kind=emb_set.kind,
        entries=[(ident, pool_tokens(m, cfg)) for ident, m in emb_set.entries],
    )
