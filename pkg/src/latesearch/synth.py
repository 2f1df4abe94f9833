"""Synthetic clustered corpora for benchmarking and recall measurement.

The generator mimics text-like structure on the unit sphere. Each of a
small number of Gaussian blobs owns a vocabulary of "word" directions
scattered around its center; a document picks one blob, samples a handful
of its words, and emits tokens as small perturbations of those words.
Queries are lightly perturbed fragments of existing documents.

This hierarchy is what makes the workload honest for approximate indexes:
rank gaps between documents are driven by word-set overlap (large and
discrete, robust to quantization noise), while token clusters around shared
words exercise candidate generation, centroid training, and near-duplicate
navigation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embstore import KIND_DOCUMENT, KIND_QUERY, EmbeddingSet, normalize_rows


@dataclass(frozen=True)
class CorpusSpec:
    n_docs: int = 2000
    min_tokens: int = 8
    max_tokens: int = 64
    dim: int = 32
    n_blobs: int = 16
    words_per_blob: int = 64
    words_per_doc: int = 6
    word_spread: float = 0.18  # word scatter around its blob center
    token_noise: float = 0.045  # token scatter around its word
    seed: int = 1234


def clustered_corpus(spec: CorpusSpec = CorpusSpec()) -> EmbeddingSet:
    """Generate the blob/vocabulary-structured document corpus."""
    rng = np.random.default_rng(spec.seed)
    blobs = rng.standard_normal((spec.n_blobs, spec.dim))
    blobs /= np.linalg.norm(blobs, axis=1, keepdims=True)
    vocab = blobs[:, None, :] + spec.word_spread * rng.standard_normal(
        (spec.n_blobs, spec.words_per_blob, spec.dim)
    )
    vocab /= np.linalg.norm(vocab, axis=2, keepdims=True)

    entries = []
    for d in range(spec.n_docs):
        blob = int(rng.integers(spec.n_blobs))
        words = rng.choice(spec.words_per_blob, size=spec.words_per_doc, replace=False)
        n_tokens = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        word_of_token = rng.integers(0, spec.words_per_doc, size=n_tokens)
        tokens = vocab[blob, words[word_of_token]] + spec.token_noise * rng.standard_normal(
            (n_tokens, spec.dim)
        )
        entries.append((f"doc{d:05d}", normalize_rows(tokens.astype(np.float32))))
    return EmbeddingSet(dim=spec.dim, kind=KIND_DOCUMENT, entries=entries)


def fragment_queries(
    corpus: EmbeddingSet,
    n_queries: int = 100,
    min_tokens: int = 8,
    max_tokens: int = 16,
    noise: float = 0.04,
    seed: int = 5678,
) -> tuple[EmbeddingSet, dict[str, str]]:
    """Queries cut from random documents, lightly perturbed.

    Returns the query set plus a map query id -> source document id, which
    doubles as single-relevant qrels for end-to-end pipeline checks.
    """
    rng = np.random.default_rng(seed)
    entries = []
    sources: dict[str, str] = {}
    for q in range(n_queries):
        src = int(rng.integers(len(corpus.entries)))
        ident, matrix = corpus.entries[src]
        want = int(rng.integers(min_tokens, max_tokens + 1))
        length = min(want, matrix.shape[0])
        start = int(rng.integers(0, matrix.shape[0] - length + 1))
        fragment = matrix[start : start + length].astype(np.float64)
        fragment = fragment + noise * rng.standard_normal(fragment.shape)
        qid = f"q{q:04d}"
        entries.append((qid, normalize_rows(fragment.astype(np.float32))))
        sources[qid] = ident
    return EmbeddingSet(dim=corpus.dim, kind=KIND_QUERY, entries=entries), sources


def write_qrels(sources: dict[str, str], path, grade: int = 1) -> None:
    """Write single-relevant qrels derived from fragment_queries sources."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(sources):
            fh.write(f"{qid} 0 {sources[qid]} {grade}\n")
