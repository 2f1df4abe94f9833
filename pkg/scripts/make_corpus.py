#!/usr/bin/env python3
"""Generate a synthetic clustered corpus as PLEM + TREC files.

Writes docs.plem, queries.plem, and truth.qrels (each query's source
document judged relevant) into --out, ready for the latesearch CLI:

    python scripts/make_corpus.py --out data/
    latesearch index --embeddings data/docs.plem --out data/idx --type plaid
    latesearch search --index data/idx --queries data/queries.plem --out data/run.trec
    latesearch evaluate --run data/run.trec --qrels data/truth.qrels
"""

import argparse
import json
from pathlib import Path

from latesearch import synth
from latesearch.embstore import write_embeddings


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--n-docs", type=int, default=2000)
    ap.add_argument("--min-tokens", type=int, default=8)
    ap.add_argument("--max-tokens", type=int, default=64)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--n-blobs", type=int, default=16)
    ap.add_argument("--words-per-blob", type=int, default=64)
    ap.add_argument("--n-queries", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    spec = synth.CorpusSpec(
        n_docs=args.n_docs,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        dim=args.dim,
        n_blobs=args.n_blobs,
        words_per_blob=args.words_per_blob,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth.clustered_corpus(spec)
    queries, sources = synth.fragment_queries(corpus, n_queries=args.n_queries, seed=args.seed + 1)
    write_embeddings(corpus, out / "docs.plem")
    write_embeddings(queries, out / "queries.plem")
    synth.write_qrels(sources, out / "truth.qrels")
    print(
        json.dumps(
            {
                "docs": len(corpus),
                "tokens": corpus.total_tokens,
                "queries": len(queries),
                "out": str(out),
            },
            sort_keys=True,
        )
    )


if __name__ == "__main__":
    main()
