#!/usr/bin/env python3
"""Sweep index knobs against the exact-scoring oracle.

Builds both index types over a synthetic corpus, then reports mean top-10
overlap with exhaustive late-interaction ranking while varying nprobe
(compressed index) and k_token (token-graph index). Useful for picking
speed/recall trade-offs before committing to parameters.
"""

import argparse
import time

import numpy as np

from latesearch import plaid, synth
from latesearch.hnsw import build_token_graph
from latesearch.scoring import rerank


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-docs", type=int, default=500)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--n-queries", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--nprobe", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    ap.add_argument("--k-token", type=int, nargs="+", default=[10, 25, 50, 100, 200])
    args = ap.parse_args()

    spec = synth.CorpusSpec(n_docs=args.n_docs, dim=args.dim, seed=args.seed)
    corpus = synth.clustered_corpus(spec)
    queries, _ = synth.fragment_queries(corpus, n_queries=args.n_queries, seed=args.seed + 1)
    entries = list(corpus.entries)
    exact = {
        qid: {sd.doc_id for sd in rerank(qm, entries)[:10]} for qid, qm in queries.entries
    }

    t0 = time.time()
    pidx = plaid.build_index(corpus, plaid.PlaidConfig(seed=args.seed))
    print(f"# plaid build: {time.time() - t0:.1f}s, k={pidx.k}, tokens={corpus.total_tokens}")
    print("nprobe  overlap@10  ms/query")
    for nprobe in args.nprobe:
        t0 = time.time()
        overlaps = [
            len({h.doc_id for h in plaid.search(pidx, qm, 10, nprobe=nprobe)} & exact[qid]) / 10
            for qid, qm in queries.entries
        ]
        ms = (time.time() - t0) / len(queries) * 1000
        print(f"{nprobe:6d}  {np.mean(overlaps):10.3f}  {ms:8.1f}")

    t0 = time.time()
    gidx = build_token_graph(corpus)
    print(f"# hnsw build: {time.time() - t0:.1f}s, nodes={gidx.n_nodes}")
    print("k_token  overlap@10  ms/query")
    for k_token in args.k_token:
        t0 = time.time()
        overlaps = [
            len({h.doc_id for h in gidx.retrieve(qm, 10, k_token=k_token)} & exact[qid]) / 10
            for qid, qm in queries.entries
        ]
        ms = (time.time() - t0) / len(queries) * 1000
        print(f"{k_token:7d}  {np.mean(overlaps):10.3f}  {ms:8.1f}")


if __name__ == "__main__":
    main()
