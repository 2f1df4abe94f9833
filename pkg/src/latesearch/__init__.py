"""latesearch: late-interaction retrieval over precomputed token embeddings.

Core pieces: exact MaxSim scoring and reranking (:mod:`latesearch.scoring`),
a PLAID-style compressed index (:mod:`latesearch.plaid`), a token-level
HNSW index (:mod:`latesearch.hnsw`), hierarchical token pooling
(:mod:`latesearch.pooling`), contrastive/distillation losses with analytic
gradients (:mod:`latesearch.losses`), and TREC-convention IR evaluation
(:mod:`latesearch.evaluation`). The ``latesearch`` CLI wires them together.
"""

from .embstore import (
    EmbeddingSet,
    KIND_DOCUMENT,
    KIND_QUERY,
    normalize_rows,
    read_embeddings,
    write_embeddings,
)
from .scoring import ScoredDoc, maxsim, maxsim_batch, rerank

__version__ = "0.1.0"

__all__ = [
    "EmbeddingSet",
    "KIND_DOCUMENT",
    "KIND_QUERY",
    "ScoredDoc",
    "maxsim",
    "maxsim_batch",
    "normalize_rows",
    "read_embeddings",
    "rerank",
    "write_embeddings",
    "__version__",
]
