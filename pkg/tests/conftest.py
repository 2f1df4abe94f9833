"""Shared fixtures and independent oracles for the test suite.

The oracles here are deliberately written in the dumbest possible style
(explicit Python loops, no shared helpers with the package) so they stay
independent of the code paths they check.
"""

import math

import numpy as np
import pytest

from latesearch import scoring, synth


def naive_maxsim(query: np.ndarray, doc: np.ndarray) -> float:
    """Triple-loop late-interaction score; the reference for every kernel."""
    total = 0.0
    for i in range(query.shape[0]):
        best = -math.inf
        for j in range(doc.shape[0]):
            s = 0.0
            for t in range(query.shape[1]):
                s += float(query[i, t]) * float(doc[j, t])
            if s > best:
                best = s
        total += best
    return total


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return m.astype(np.float32)


@pytest.fixture(scope="session")
def acceptance_corpus():
    return synth.clustered_corpus()


@pytest.fixture(scope="session")
def acceptance_queries(acceptance_corpus):
    return synth.fragment_queries(acceptance_corpus)


@pytest.fixture(scope="session")
def exact_top10(acceptance_corpus, acceptance_queries):
    """Exact MaxSim top-10 doc ids per query, on original embeddings."""
    queries, _ = acceptance_queries
    entries = list(acceptance_corpus.entries)
    return {
        qid: [sd.doc_id for sd in scoring.rerank(qm, entries)[:10]]
        for qid, qm in queries.entries
    }
