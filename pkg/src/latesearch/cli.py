"""Command-line front door: index, search, rerank, pool, evaluate.

Machine-readable JSON goes to stdout; human-facing messages go to stderr,
so commands compose in pipelines. Exit codes: 0 success, 2 usage or input
error, 3 internal invariant violation. Every option can also be supplied
through LATESEARCH_* environment variables at lower precedence than flags.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluation, hnsw, losses, plaid
from .embstore import KIND_DOCUMENT, KIND_QUERY, EmbeddingSet, read_embeddings, write_embeddings
from .errors import BadManifest, KindMismatch, LateSearchError, MissingDoc
from .pooling import PoolingConfig, pool_corpus
from .scoring import rerank as rerank_candidates

CONTEXT_SETTINGS = {"auto_envvar_prefix": "LATESEARCH", "help_option_names": ["-h", "--help"]}


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (LateSearchError, OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (SystemExit, KeyboardInterrupt):
            raise
        except Exception as exc:
            click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _emit(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True))


def _load_set(path: str, expect_kind: str, normalize: bool) -> EmbeddingSet:
    emb = read_embeddings(path)
    if emb.kind != expect_kind:
        raise KindMismatch(f"{path} holds {emb.kind} embeddings, expected {expect_kind}")
    return emb.normalized() if normalize else emb


def _detect_index(directory: str):
    manifest_path = Path(directory) / "manifest.json"
    if not manifest_path.exists():
        raise BadManifest(f"no manifest.json under {directory}")
    try:
        fmt = json.loads(manifest_path.read_text()).get("format")
    except json.JSONDecodeError as exc:
        raise BadManifest(f"unreadable manifest: {exc}") from exc
    if fmt == plaid.MANIFEST_FORMAT:
        return "plaid", plaid.load_index(directory)
    if fmt == hnsw.MANIFEST_FORMAT:
        return "hnsw", hnsw.load_token_graph(directory)
    raise BadManifest(f"unknown index format {fmt!r}")


def _dir_bytes(directory: str | Path) -> int:
    return sum(p.stat().st_size for p in Path(directory).iterdir() if p.is_file())


@click.group(context_settings=CONTEXT_SETTINGS)
@click.version_option()
def main():
    """Late-interaction retrieval over precomputed token embeddings."""


@main.command("index")
@click.option("--embeddings", required=True, help="document PLEM-v1 file")
@click.option("--out", required=True, help="index directory to create")
@click.option("--type", "index_type", type=click.Choice(["plaid", "hnsw"]), default="plaid")
@click.option("--nbits", type=int, default=2, help="residual bits per dimension (plaid)")
@click.option("--nprobe", type=int, default=4, help="centroids probed per query token (plaid)")
@click.option("--kmeans-k", default="auto", help="centroid count, integer or 'auto' (plaid)")
@click.option("--pool-factor", type=int, default=1, help="pool documents before indexing")
@click.option("--seed", type=int, default=42)
@click.option("--threads", type=int, default=1, help="worker cap (results are thread-count independent)")
@click.option("--no-normalize", is_flag=True, help="trust the input rows to be unit-norm")
@_guard
def cmd_index(embeddings, out, index_type, nbits, nprobe, kmeans_k, pool_factor, seed, threads, no_normalize):
    """Build an index directory from document embeddings."""
    if threads < 1:
        raise ValueError("--threads must be >= 1")
    docs = _load_set(embeddings, KIND_DOCUMENT, normalize=not no_normalize)
    if pool_factor > 1:
        docs = pool_corpus(docs, PoolingConfig(pool_factor=pool_factor))
    summary = {
        "type": index_type,
        "out": str(out),
        "docs": len(docs),
        "tokens": docs.total_tokens,
        "pool_factor": pool_factor,
    }
    if index_type == "plaid":
        k = kmeans_k if kmeans_k == "auto" else int(kmeans_k)
        cfg = plaid.PlaidConfig(n_centroids=k, nbits=nbits, nprobe=nprobe, seed=seed)
        index = plaid.build_index(docs, cfg)
        plaid.save_index(index, out)
        summary["n_centroids"] = index.k
        summary["footprint_bytes"] = index.residual_payload_bytes
    else:
        index = hnsw.build_token_graph(docs, hnsw.HnswConfig(seed=seed))
        hnsw.save_token_graph(index, out)
        summary["footprint_bytes"] = _dir_bytes(out)
    _emit(summary)


@main.command("search")
@click.option("--index", "index_dir", required=True, help="index directory")
@click.option("--queries", required=True, help="query PLEM-v1 file")
@click.option("--k", type=int, default=10)
@click.option("--out", required=True, help="TREC run file to write")
@click.option("--nprobe", type=int, default=None, help="override the indexed nprobe (plaid)")
@click.option("--threads", type=int, default=1)
@click.option("--no-normalize", is_flag=True)
@_guard
def cmd_search(index_dir, queries, k, out, nprobe, threads, no_normalize):
    """Retrieve top-k documents per query, writing a TREC run."""
    if threads < 1:
        raise ValueError("--threads must be >= 1")
    kind, index = _detect_index(index_dir)
    query_set = _load_set(queries, KIND_QUERY, normalize=not no_normalize)
    run: evaluation.Run = {}
    for qid, matrix in query_set.entries:
        if kind == "plaid":
            hits = plaid.search(index, matrix, k, nprobe=nprobe)
        else:
            hits = index.retrieve(matrix, k)
        run[qid] = [(sd.doc_id, sd.score) for sd in hits]
    evaluation.write_run(run, out, tag=kind)
    _emit({"queries": len(query_set), "k": k, "out": str(out), "tag": kind})


@main.command("rerank")
@click.option("--queries", required=True, help="query PLEM-v1 file")
@click.option("--run", "run_path", required=True, help="candidate TREC run")
@click.option("--embeddings", required=True, help="document PLEM-v1 file")
@click.option("--out", required=True, help="reranked TREC run to write")
@click.option("--no-normalize", is_flag=True)
@_guard
def cmd_rerank(queries, run_path, embeddings, out, no_normalize):
    """Rescore run candidates with exact late-interaction similarity."""
    query_set = _load_set(queries, KIND_QUERY, normalize=not no_normalize)
    docs = _load_set(embeddings, KIND_DOCUMENT, normalize=not no_normalize)
    doc_map = dict(docs.entries)
    queries_map = dict(query_set.entries)
    candidates = evaluation.load_run(run_path)
    reranked: evaluation.Run = {}
    for qid, ranking in candidates.items():
        if qid not in queries_map:
            raise MissingDoc(qid)
        cands = []
        for did, _ in ranking:
            if did not in doc_map:
                raise MissingDoc(did)
            cands.append((did, doc_map[did]))
        hits = rerank_candidates(queries_map[qid], cands)
        reranked[qid] = [(sd.doc_id, sd.score) for sd in hits]
    evaluation.write_run(reranked, out, tag="rerank")
    _emit({"queries": len(reranked), "out": str(out)})


@main.command("pool")
@click.option("--embeddings", required=True, help="document PLEM-v1 file")
@click.option("--pool-factor", type=int, required=True)
@click.option("--protect-first-token", is_flag=True)
@click.option("--out", required=True, help="pooled PLEM-v1 file to write")
@click.option("--no-normalize", is_flag=True)
@_guard
def cmd_pool(embeddings, pool_factor, protect_first_token, out, no_normalize):
    """Shrink a document corpus with hierarchical token pooling."""
    docs = _load_set(embeddings, KIND_DOCUMENT, normalize=not no_normalize)
    cfg = PoolingConfig(pool_factor=pool_factor, protect_first_token=protect_first_token)
    pooled = pool_corpus(docs, cfg)
    write_embeddings(pooled, out)
    _emit(
        {
            "docs": len(pooled),
            "tokens_before": docs.total_tokens,
            "tokens_after": pooled.total_tokens,
            "out": str(out),
        }
    )


@main.command("evaluate")
@click.option("--run", "run_path", required=True, help="TREC run file")
@click.option("--qrels", required=True, help="TREC qrels file")
@click.option("--metrics", default="map,ndcg@10,recall@100", help="comma-separated metric names")
@_guard
def cmd_evaluate(run_path, qrels, metrics):
    """Score a run against qrels; prints key-sorted JSON means."""
    run = evaluation.load_run(run_path)
    judgments = evaluation.load_qrels(qrels)
    names = [m.strip() for m in metrics.split(",") if m.strip()]
    _emit(evaluation.evaluate(run, judgments, names))


@main.command("losses-demo")
@click.option("--seed", type=int, default=42)
@_guard
def cmd_losses_demo(seed):
    """Run loss forward/gradient checks on random batches and report."""
    rng = np.random.default_rng(seed)

    def unit(shape):
        v = rng.standard_normal(shape)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    queries = [unit((3, 8)) for _ in range(2)]
    docs = [[unit((4, 8)) for _ in range(2)] for _ in range(2)]
    batch = losses.ContrastiveBatch(queries, docs, temperature=0.5)
    loss, scores = losses.contrastive_forward(batch)
    qg, dg = losses.contrastive_grad(batch)
    fd_err = _fd_check_contrastive(batch, qg, dg)

    teacher = rng.standard_normal((2, 2)) * 3
    dbatch = losses.DistillBatch(queries, docs, teacher_scores=teacher)
    dloss = losses.distill_forward(dbatch)
    dqg, ddg = losses.distill_grad(dbatch)
    dfd_err = _fd_check_distill(dbatch, dqg, ddg)

    enc = losses.ToyEncoder(rng.standard_normal((6, 8)))
    raw_q = [rng.standard_normal((3, 6)) for _ in range(3)]
    raw_d = [[rng.standard_normal((4, 6))] for _ in range(3)]
    full = losses.gradcache_run(enc, raw_q, raw_d, chunk_size=3)
    chunked = losses.gradcache_run(enc, raw_q, raw_d, chunk_size=1)
    _emit(
        {
            "contrastive_loss": loss,
            "contrastive_score_matrix_shape": list(scores.shape),
            "contrastive_fd_max_rel_err": fd_err,
            "distill_loss": dloss,
            "distill_fd_max_rel_err": dfd_err,
            "gradcache_loss_bitwise_equal": bool(full.loss == chunked.loss),
            "gradcache_grad_max_abs_diff": float(
                np.abs(full.weight_grad - chunked.weight_grad).max()
            ),
            "seed": seed,
        }
    )


def _fd_check_contrastive(batch, query_grads, doc_grads, eps=1e-5):
    def loss_at():
        return losses.contrastive_forward(batch)[0]

    return _fd_max_rel_err(batch.queries, batch.docs, query_grads, doc_grads, loss_at, eps)


def _fd_check_distill(batch, query_grads, doc_grads, eps=1e-5):
    def loss_at():
        return losses.distill_forward(batch)

    return _fd_max_rel_err(batch.queries, batch.docs, query_grads, doc_grads, loss_at, eps)


def _fd_max_rel_err(queries, docs, query_grads, doc_grads, loss_at, eps):
    worst = 0.0
    arrays = list(zip(queries, query_grads)) + [
        (d, g) for group, ggroup in zip(docs, doc_grads) for d, g in zip(group, ggroup)
    ]
    for arr, grad in arrays:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(0, flat.size, max(1, flat.size // 4)):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_at()
            flat[idx] = orig - eps
            down = loss_at()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(gflat[idx]), 1e-8)
            worst = max(worst, abs(fd - gflat[idx]) / denom)
    return worst


@main.command("info")
@click.option("--index", "index_dir", required=True, help="index directory")
@_guard
def cmd_info(index_dir):
    """Print index statistics as JSON."""
    kind, index = _detect_index(index_dir)
    if kind == "plaid":
        corpus = index.corpus
        _emit(
            {
                "type": "plaid",
                "dim": index.dim,
                "docs": corpus.n_docs,
                "tokens": corpus.total_tokens,
                "n_centroids": index.k,
                "nbits": corpus.nbits,
                "residual_payload_bytes": index.residual_payload_bytes,
                "directory_bytes": _dir_bytes(index_dir),
            }
        )
    else:
        _emit(
            {
                "type": "hnsw",
                "dim": index.dim,
                "docs": len(index.docs) if index.docs else 0,
                "tokens": index.n_nodes,
                "entry_level": index.entry_level,
                "m": index.config.m,
                "directory_bytes": _dir_bytes(index_dir),
            }
        )


if __name__ == "__main__":
    main()
