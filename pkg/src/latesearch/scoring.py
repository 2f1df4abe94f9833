"""Exact MaxSim similarity and reranking over in-memory token matrices.

The late-interaction score between a query Q and a document D is the sum
over query tokens of each token's best dot product against any document
token. On unit-norm rows this is a sum of cosines, bounded by the number of
query tokens. All reductions here accumulate in float64 regardless of the
(float32) storage dtype, so batch kernels and the naive per-pair loop agree
to well under 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, DuplicateId, EmptyMatrix


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


def _check_pair(query: np.ndarray, doc: np.ndarray) -> None:
    if query.ndim != 2 or doc.ndim != 2:
        raise DimMismatch("token matrices must be 2-D")
    if query.shape[0] == 0 or doc.shape[0] == 0:
        raise EmptyMatrix("maxsim is undefined for empty matrices")
    if query.shape[1] != doc.shape[1]:
        raise DimMismatch(f"query dim {query.shape[1]} != doc dim {doc.shape[1]}")


def maxsim(query: np.ndarray, doc: np.ndarray, normalize_by_query_length: bool = False) -> float:
    """Late-interaction score: sum over query rows of the best doc-row dot.

    ``normalize_by_query_length`` divides the sum by the number of query
    tokens; the default is the raw (unnormalized) sum.
    """
    _check_pair(query, doc)
    sim = query.astype(np.float64) @ doc.astype(np.float64).T
    score = float(sim.max(axis=1).sum())
    if normalize_by_query_length:
        score /= query.shape[0]
    return score


def maxsim_many(query: np.ndarray, docs: list[np.ndarray]) -> np.ndarray:
    """Scores of one query against a list of docs, as a float64 vector.

    One fused matmul against the concatenated doc tokens, then a per-doc
    segment max; equal to calling :func:`maxsim` per pair within 1e-5.
    """
    if not docs:
        return np.zeros(0, dtype=np.float64)
    for d in docs:
        _check_pair(query, d)
    lens = np.array([d.shape[0] for d in docs])
    stacked = np.concatenate(docs, axis=0).astype(np.float64)
    sim = query.astype(np.float64) @ stacked.T  # (|Q|, total_tokens)
    starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
    per_doc_max = np.maximum.reduceat(sim, starts, axis=1)  # (|Q|, n_docs)
    return per_doc_max.sum(axis=0)


def maxsim_batch(queries: list[np.ndarray], docs: list[np.ndarray]) -> np.ndarray:
    """All-pairs MaxSim scores as a float64 (n_queries, n_docs) matrix."""
    for q in queries:
        if q.ndim != 2 or q.shape[0] == 0:
            raise EmptyMatrix("empty query matrix in batch")
    dims = {m.shape[1] for m in queries} | {m.shape[1] for m in docs}
    if len(dims) > 1:
        raise DimMismatch(f"mixed dims in batch: {sorted(dims)}")
    out = np.zeros((len(queries), len(docs)), dtype=np.float64)
    if not docs:
        return out
    for i, q in enumerate(queries):
        out[i] = maxsim_many(q, docs)
    return out


def rerank(
    query: np.ndarray, candidates: list[tuple[str, np.ndarray]]
) -> list[ScoredDoc]:
    """Score and sort candidates for one query.

    Returns every candidate, best first; equal scores order by ascending
    doc id so output is deterministic.
    """
    seen: set[str] = set()
    for ident, _ in candidates:
        if ident in seen:
            raise DuplicateId(ident)
        seen.add(ident)
    scores = maxsim_many(query, [m for _, m in candidates])
    ranked = sorted(
        (ScoredDoc(ident, float(s)) for (ident, _), s in zip(candidates, scores)),
        key=lambda sd: (-sd.score, sd.doc_id),
    )
    return ranked
