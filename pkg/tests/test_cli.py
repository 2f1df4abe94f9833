import json

import numpy as np
import pytest
from click.testing import CliRunner

from latesearch import synth
from latesearch.cli import main
from latesearch.embstore import read_embeddings, write_embeddings

runner = CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small corpus + queries + qrels written as real files."""
    root = tmp_path_factory.mktemp("cli")
    spec = synth.CorpusSpec(
        n_docs=60, min_tokens=6, max_tokens=14, dim=16, n_blobs=4, words_per_blob=8, seed=21
    )
    corpus = synth.clustered_corpus(spec)
    queries, sources = synth.fragment_queries(
        corpus, n_queries=12, min_tokens=4, max_tokens=6, seed=22
    )
    write_embeddings(corpus, root / "docs.plem")
    write_embeddings(queries, root / "queries.plem")
    synth.write_qrels(sources, root / "truth.qrels")
    return root


def run_cli(args, **kwargs):
    return runner.invoke(main, args, catch_exceptions=False, **kwargs)


class TestIndexCommand:
    def test_plaid_happy_path(self, workspace, tmp_path):
        out = tmp_path / "idx"
        res = run_cli(
            ["index", "--embeddings", str(workspace / "docs.plem"), "--out", str(out), "--type", "plaid", "--nbits", "2"]
        )
        assert res.exit_code == 0, res.output
        summary = json.loads(res.output)
        assert summary["docs"] == 60
        assert (out / "manifest.json").exists()
        docs = read_embeddings(workspace / "docs.plem")
        assert summary["footprint_bytes"] == docs.total_tokens * 16 * 2 // 8

    def test_hnsw_happy_path(self, workspace, tmp_path):
        out = tmp_path / "idx"
        res = run_cli(
            ["index", "--embeddings", str(workspace / "docs.plem"), "--out", str(out), "--type", "hnsw"]
        )
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["type"] == "hnsw"

    def test_missing_file_exit_2(self, tmp_path):
        res = runner.invoke(
            main, ["index", "--embeddings", str(tmp_path / "nope.plem"), "--out", str(tmp_path / "o")]
        )
        assert res.exit_code == 2

    def test_queries_rejected_exit_2(self, workspace, tmp_path):
        res = runner.invoke(
            main,
            ["index", "--embeddings", str(workspace / "queries.plem"), "--out", str(tmp_path / "o")],
        )
        assert res.exit_code == 2

    def test_pool_factor_flag(self, workspace, tmp_path):
        out = tmp_path / "idx"
        res = run_cli(
            [
                "index", "--embeddings", str(workspace / "docs.plem"),
                "--out", str(out), "--type", "plaid", "--pool-factor", "2",
            ]
        )
        assert res.exit_code == 0
        summary = json.loads(res.output)
        docs = read_embeddings(workspace / "docs.plem")
        assert summary["tokens"] < docs.total_tokens
        assert summary["pool_factor"] == 2


@pytest.fixture(scope="module")
def plaid_dir(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("idx") / "plaid"
    run_cli(["index", "--embeddings", str(workspace / "docs.plem"), "--out", str(out)])
    return out


class TestSearchCommand:
    def test_run_file_shape(self, workspace, plaid_dir, tmp_path):
        run_path = tmp_path / "out.trec"
        res = run_cli(
            ["search", "--index", str(plaid_dir), "--queries", str(workspace / "queries.plem"), "--k", "10", "--out", str(run_path)]
        )
        assert res.exit_code == 0, res.output
        lines = run_path.read_text().splitlines()
        per_query = {}
        for line in lines:
            qid, q0, did, rank, score, tag = line.split()
            assert q0 == "Q0" and tag == "plaid"
            per_query.setdefault(qid, []).append(int(rank))
        assert all(len(v) <= 10 for v in per_query.values())

    def test_dim_mismatch_exit_2(self, plaid_dir, tmp_path):
        from latesearch.embstore import EmbeddingSet, KIND_QUERY

        rng = np.random.default_rng(0)
        bad = EmbeddingSet(
            dim=8,
            kind=KIND_QUERY,
            entries=[("q", (rng.standard_normal((3, 8))).astype(np.float32))],
        )
        write_embeddings(bad, tmp_path / "bad.plem")
        res = runner.invoke(
            main,
            ["search", "--index", str(plaid_dir), "--queries", str(tmp_path / "bad.plem"), "--out", str(tmp_path / "r.trec")],
        )
        assert res.exit_code == 2

    def test_byte_identical_across_threads(self, workspace, plaid_dir, tmp_path):
        outs = []
        for i, threads in enumerate(("1", "8")):
            run_path = tmp_path / f"run{i}.trec"
            res = run_cli(
                ["search", "--index", str(plaid_dir), "--queries", str(workspace / "queries.plem"), "--out", str(run_path), "--threads", threads]
            )
            assert res.exit_code == 0
            outs.append(run_path.read_bytes())
        assert outs[0] == outs[1]


class TestRerankCommand:
    def test_fixpoint_on_exact_run(self, workspace, tmp_path):
        # hnsw retrieve on a corpus smaller than k_token is an exhaustive
        # exact ranking; reranking its run must reproduce it byte for byte
        idx = tmp_path / "hidx"
        run_cli(["index", "--embeddings", str(workspace / "docs.plem"), "--out", str(idx), "--type", "hnsw"])
        first = tmp_path / "first.trec"
        run_cli(["search", "--index", str(idx), "--queries", str(workspace / "queries.plem"), "--k", "10", "--out", str(first)])
        rer = tmp_path / "rer.trec"
        res = run_cli(
            ["rerank", "--queries", str(workspace / "queries.plem"), "--run", str(first), "--embeddings", str(workspace / "docs.plem"), "--out", str(rer)]
        )
        assert res.exit_code == 0, res.output
        first_rows = [line.split()[:5] for line in first.read_text().splitlines()]
        rer_rows = [line.split()[:5] for line in rer.read_text().splitlines()]
        assert first_rows == rer_rows

    def test_missing_doc_exit_2(self, workspace, tmp_path):
        bad_run = tmp_path / "bad.trec"
        bad_run.write_text("q0000 Q0 ghostdoc 1 1.000000 x\n")
        res = runner.invoke(
            main,
            ["rerank", "--queries", str(workspace / "queries.plem"), "--run", str(bad_run), "--embeddings", str(workspace / "docs.plem"), "--out", str(tmp_path / "o.trec")],
        )
        assert res.exit_code == 2
        assert "ghostdoc" in res.output

    def test_single_candidate(self, workspace, tmp_path):
        docs = read_embeddings(workspace / "docs.plem")
        only = tmp_path / "one.trec"
        only.write_text(f"q0000 Q0 {docs.ids[0]} 1 0.5 x\n")
        out = tmp_path / "out.trec"
        res = run_cli(
            ["rerank", "--queries", str(workspace / "queries.plem"), "--run", str(only), "--embeddings", str(workspace / "docs.plem"), "--out", str(out)]
        )
        assert res.exit_code == 0
        line = out.read_text().splitlines()[0].split()
        assert line[2] == docs.ids[0]
        assert float(line[4]) != 0.5  # score replaced by the exact similarity


class TestPoolCommand:
    def test_halves_tokens(self, workspace, tmp_path):
        out = tmp_path / "pooled.plem"
        res = run_cli(
            ["pool", "--embeddings", str(workspace / "docs.plem"), "--pool-factor", "2", "--out", str(out)]
        )
        assert res.exit_code == 0
        summary = json.loads(res.output)
        pooled = read_embeddings(out)
        docs = read_embeddings(workspace / "docs.plem")
        assert summary["tokens_after"] == pooled.total_tokens
        for (_, before), (_, after) in zip(docs.entries, pooled.entries):
            assert after.shape[0] == -(-before.shape[0] // 2)


class TestEvaluateCommand:
    def test_hand_fixture(self, tmp_path):
        run = tmp_path / "run.trec"
        run.write_text(
            "q1 Q0 d2 1 3.000000 t\nq1 Q0 d1 2 2.000000 t\nq1 Q0 d3 3 1.000000 t\n"
        )
        qrels = tmp_path / "q.qrels"
        qrels.write_text("q1 0 d1 2\nq1 0 d2 1\n")
        res = run_cli(
            ["evaluate", "--run", str(run), "--qrels", str(qrels), "--metrics", "ndcg@3,map,recall@3"]
        )
        assert res.exit_code == 0, res.output
        out = json.loads(res.output)
        assert out["ndcg@3"] == pytest.approx(0.85972, abs=1e-4)
        assert out["recall@3"] == 1.0
        assert out["map"] == pytest.approx((1.0 / 1 + 2.0 / 2) / 2, abs=1e-6)

    def test_unknown_metric_exit_2(self, tmp_path):
        run = tmp_path / "run.trec"
        run.write_text("q1 Q0 d1 1 1.000000 t\n")
        qrels = tmp_path / "q.qrels"
        qrels.write_text("q1 0 d1 1\n")
        res = runner.invoke(
            main, ["evaluate", "--run", str(run), "--qrels", str(qrels), "--metrics", "mrr@10"]
        )
        assert res.exit_code == 2
        assert "ndcg@K" in res.output  # grammar help

    def test_output_key_sorted(self, tmp_path):
        run = tmp_path / "run.trec"
        run.write_text("q1 Q0 d1 1 1.000000 t\n")
        qrels = tmp_path / "q.qrels"
        qrels.write_text("q1 0 d1 1\n")
        res = run_cli(
            ["evaluate", "--run", str(run), "--qrels", str(qrels), "--metrics", "recall@5,map,ndcg@5"]
        )
        keys = list(json.loads(res.output))
        assert keys == sorted(keys)


class TestInfoCommand:
    def test_plaid_footprint_reported(self, workspace, tmp_path):
        out = tmp_path / "idx"
        run_cli(["index", "--embeddings", str(workspace / "docs.plem"), "--out", str(out), "--nbits", "4"])
        res = run_cli(["info", "--index", str(out)])
        assert res.exit_code == 0
        info = json.loads(res.output)
        assert info["residual_payload_bytes"] == info["tokens"] * info["dim"] * info["nbits"] // 8

    def test_bad_dir_exit_2(self, tmp_path):
        res = runner.invoke(main, ["info", "--index", str(tmp_path)])
        assert res.exit_code == 2


class TestLossesDemo:
    def test_reports_small_errors(self):
        res = run_cli(["losses-demo", "--seed", "7"])
        assert res.exit_code == 0, res.output
        report = json.loads(res.output)
        assert report["contrastive_fd_max_rel_err"] < 1e-4
        assert report["distill_fd_max_rel_err"] < 1e-4
        assert report["gradcache_loss_bitwise_equal"] is True
        assert report["gradcache_grad_max_abs_diff"] < 1e-10


class TestEnvPrecedence:
    def test_env_supplies_default_flag_overrides(self, workspace, tmp_path):
        idx = tmp_path / "idx"
        run_cli(["index", "--embeddings", str(workspace / "docs.plem"), "--out", str(idx)])
        env_run = tmp_path / "env.trec"
        res = run_cli(
            ["search", "--index", str(idx), "--queries", str(workspace / "queries.plem"), "--out", str(env_run)],
            env={"LATESEARCH_SEARCH_K": "3"},
        )
        assert res.exit_code == 0
        ranks = [int(line.split()[3]) for line in env_run.read_text().splitlines()]
        assert max(ranks) <= 3
        flag_run = tmp_path / "flag.trec"
        res = run_cli(
            ["search", "--index", str(idx), "--queries", str(workspace / "queries.plem"), "--k", "5", "--out", str(flag_run)],
            env={"LATESEARCH_SEARCH_K": "3"},
        )
        assert res.exit_code == 0
        ranks = [int(line.split()[3]) for line in flag_run.read_text().splitlines()]
        assert max(ranks) == 5  # flag wins over env
